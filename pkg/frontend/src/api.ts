/** Typed client for the labeling service JSON API. */

export interface TrajectoryPayload {
  id: string;
  states: number[][];
  actions: number[][];
  render: number[][] | null;
  env: string;
}

export interface PairPayload {
  pair_id: string;
  traj0: TrajectoryPayload;
  traj1: TrajectoryPayload;
  labeled: number;
  total: number;
}

export interface DonePayload {
  done: true;
  labeled: number;
  total: number;
}

export interface Progress {
  labeled: number;
  total: number;
}

export type NextResponse = PairPayload | DonePayload;

export type PreferenceLabel = 0 | 0.5 | 1;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

async function parse<T>(resp: Response): Promise<T> {
  const body = await resp.json().catch(() => ({ error: "invalid JSON from service" }));
  if (!resp.ok) {
    throw new ApiError(resp.status, (body as { error?: string }).error ?? `HTTP ${resp.status}`);
  }
  return body as T;
}

export class LabelApi {
  constructor(private readonly base: string = "") {}

  async nextPair(): Promise<NextResponse> {
    return parse<NextResponse>(await fetch(`${this.base}/api/pair/next`));
  }

  async submit(pairId: string, label: PreferenceLabel): Promise<Progress> {
    const resp = await fetch(`${this.base}/api/label`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ pair_id: pairId, label }),
    });
    return parse<Progress>(resp);
  }

  async progress(): Promise<Progress> {
    return parse<Progress>(await fetch(`${this.base}/api/progress`));
  }
}

export function isDone(resp: NextResponse): resp is DonePayload {
  return (resp as DonePayload).done === true;
}
