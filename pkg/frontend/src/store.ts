/**
 * Annotation session state: the pair queue, the current view, and the
 * submit flow. Keeps mask and selection state intact on any server error so
 * the annotator never loses work.
 */

import { ApiClient, ApiError, PairDetail, PairSummary } from "./api.js";
import { MaskRaster } from "./mask.js";
import { Selection } from "./selection.js";

export interface UiPairView {
  detail: PairDetail;
  mask: MaskRaster;
  wholeImage: boolean;
  selection: Selection;
}

export type SubmitOutcome =
  | { kind: "ok" }
  | { kind: "blocked"; message: string }
  | { kind: "conflict"; message: string }
  | { kind: "rejected"; code: string; message: string }
  | { kind: "network"; message: string };

export class SessionStore {
  pairs: PairSummary[] = [];
  queueIndex = 0;
  view: UiPairView | null = null;
  submitted = 0;

  constructor(
    private api: ApiClient,
    private imageSize: { width: number; height: number },
    public annotator = "",
  ) {}

  async start(): Promise<void> {
    this.pairs = await this.api.listPairs();
    this.queueIndex = this.pairs.findIndex((p) => !p.annotated);
    if (this.queueIndex < 0) this.queueIndex = this.pairs.length;
    await this.loadCurrent();
  }

  get done(): boolean {
    return this.queueIndex >= this.pairs.length;
  }

  async loadCurrent(): Promise<void> {
    if (this.done) {
      this.view = null;
      return;
    }
    const detail = await this.api.getPair(this.pairs[this.queueIndex].pair_id);
    this.view = {
      detail,
      mask: new MaskRaster(this.imageSize.width, this.imageSize.height),
      wholeImage: false,
      selection: new Selection(),
    };
  }

  /** Submit invariant: nonempty mask (or whole-image confirm) and winner != loser set. */
  canSubmit(): { ok: boolean; reason?: string } {
    const v = this.view;
    if (!v) return { ok: false, reason: "no pair loaded" };
    if (v.mask.isEmpty() && !v.wholeImage) {
      return { ok: false, reason: "draw a region or confirm whole-image mode" };
    }
    if (!v.selection.complete) {
      return { ok: false, reason: "pick a winner and a loser" };
    }
    return { ok: true };
  }

  async skipCurrent(): Promise<void> {
    this.queueIndex += 1;
    await this.loadCurrent();
  }

  async submit(encodePng: (mask: MaskRaster) => Promise<Blob>): Promise<SubmitOutcome> {
    const check = this.canSubmit();
    const v = this.view;
    if (!check.ok || !v) return { kind: "blocked", message: check.reason ?? "not ready" };
    const mask = v.wholeImage && v.mask.isEmpty() ? fullMask(v.mask) : v.mask;
    try {
      await this.api.submitPreference(
        v.detail.pair_id,
        v.selection.winnerIdx!,
        v.selection.loserIdx!,
        this.annotator,
        await encodePng(mask),
      );
    } catch (err) {
      if (err instanceof ApiError) {
        // mask and selection state stay untouched on any server rejection
        if (err.status === 409) return { kind: "conflict", message: err.message };
        return { kind: "rejected", code: err.code, message: err.message };
      }
      return { kind: "network", message: String(err) };
    }
    this.submitted += 1;
    this.queueIndex += 1;
    await this.loadCurrent();
    return { kind: "ok" };
  }
}

function fullMask(like: MaskRaster): MaskRaster {
  const m = new MaskRaster(like.width, like.height);
  m.fillAll();
  return m;
}
