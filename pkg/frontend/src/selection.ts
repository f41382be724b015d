/**
 * Winner/loser tile selection: first click sets the winner, second click a
 * different tile as loser. Clicking the winner again is rejected with a hint.
 */

export interface SelectionResult {
  accepted: boolean;
  hint?: string;
}

export class Selection {
  winnerIdx: number | null = null;
  loserIdx: number | null = null;

  clickTile(idx: number, numTiles: number): SelectionResult {
    if (!Number.isInteger(idx) || idx < 0 || idx >= numTiles) {
      return { accepted: false, hint: `tile ${idx} out of range` };
    }
    if (this.winnerIdx === null) {
      this.winnerIdx = idx;
      return { accepted: true };
    }
    if (this.loserIdx !== null) {
      return { accepted: false, hint: "selection complete; reset to change it" };
    }
    if (idx === this.winnerIdx) {
      return { accepted: false, hint: "loser must differ from the winner" };
    }
    this.loserIdx = idx;
    return { accepted: true };
  }

  get complete(): boolean {
    return this.winnerIdx !== null && this.loserIdx !== null;
  }

  reset(): void {
    this.winnerIdx = null;
    this.loserIdx = null;
  }
}
