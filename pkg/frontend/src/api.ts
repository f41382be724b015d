/** Typed client for the annotation service HTTP API. */

export interface PairSummary {
  pair_id: string;
  num_candidates: number;
  annotated: boolean;
}

export interface CandidateView {
  index: number;
  url: string;
  prompt_kind: "general" | "property";
  level: number | null;
}

export interface PairDetail {
  pair_id: string;
  ir_url: string;
  vis_url: string;
  candidates: CandidateView[];
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

async function raiseForError(res: Response): Promise<void> {
  if (res.ok) return;
  let code = "unknown";
  let message = res.statusText;
  try {
    const body = (await res.json()) as { code?: string; message?: string };
    if (body.code) code = body.code;
    if (body.message) message = body.message;
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(res.status, code, message);
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = fetch,
  ) {}

  async listPairs(): Promise<PairSummary[]> {
    const res = await this.fetchImpl(`${this.baseUrl}/api/pairs`);
    await raiseForError(res);
    return ((await res.json()) as { pairs: PairSummary[] }).pairs;
  }

  async getPair(pairId: string): Promise<PairDetail> {
    const res = await this.fetchImpl(`${this.baseUrl}/api/pairs/${pairId}`);
    await raiseForError(res);
    return (await res.json()) as PairDetail;
  }

  imageUrl(relative: string): string {
    return `${this.baseUrl}${relative}`;
  }

  async submitPreference(
    pairId: string,
    winnerIdx: number,
    loserIdx: number,
    annotator: string,
    maskPng: Blob,
  ): Promise<void> {
    const form = new FormData();
    form.set("winner_idx", String(winnerIdx));
    form.set("loser_idx", String(loserIdx));
    form.set("annotator", annotator);
    form.set("mask", maskPng, "mask.png");
    const res = await this.fetchImpl(`${this.baseUrl}/api/pairs/${pairId}/preference`, {
      method: "POST",
      body: form,
    });
    await raiseForError(res);
  }

  async exportManifest(): Promise<string> {
    const res = await this.fetchImpl(`${this.baseUrl}/api/export`);
    await raiseForError(res);
    return res.text();
  }
}
