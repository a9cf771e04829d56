/** Typed client for the simulator's HTTP API. Every mutation returns the
 * full session view, so callers never have to guess at the resulting state;
 * phase violations surface as ApiError with status 409 and the authoritative
 * phase in the body. */

export interface PhaseView {
  kind: string;
  contest_index: number | null;
}

export interface CandidateView {
  candidate_id: string;
  name: string;
}

export interface ContestView {
  contest_id: string;
  title: string;
  vote_for: number;
  candidates: CandidateView[];
}

export interface ReviewView {
  contest_id: string;
  intent_text: string;
  printed_text: string;
}

export interface LineView {
  seq: number;
  contest_id: string;
  text: string;
}

export interface BallotView {
  ballot_id: string;
  disposition: string;
}

export interface SessionView {
  session_id: string;
  phase: PhaseView;
  phase_label: string;
  contest_count: number;
  contest: ContestView | null;
  review: ReviewView | null;
  intent: Record<string, string[]>;
  intent_text: Record<string, string>;
  lines: LineView[];
  manual_detection: boolean;
  ballot: BallotView | null;
}

export interface MachineView {
  machine_kind: string;
  powered: boolean;
  boot_epoch: number;
  image_id: string;
  active_payload_ids: string[];
  attached_media: string[];
}

export interface ElectionView {
  election_id: string;
  title: string;
  contests: {
    contest_id: string;
    title: string;
    vote_for: number;
    candidates: { candidate_id: string; name: string }[];
  }[];
}

export interface ServiceEvent {
  id: number;
  kind: string;
  [key: string]: unknown;
}

export interface EventBatch {
  events: ServiceEvent[];
  next_after: number;
}

export interface PayloadDoc {
  payload_id: string;
  effect: {
    kind: string;
    contest_id?: string;
    mapping?: Record<string, string>;
  };
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly body: Record<string, unknown>,
  ) {
    super(String(body.error ?? body.detail ?? `request failed (${status})`));
  }
}

export class BoothApi {
  constructor(readonly base: string = "") {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await fetch(this.base + path, {
      method,
      headers: body === undefined ? {} : { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await response.text();
    const parsed = text ? JSON.parse(text) : {};
    if (!response.ok) {
      throw new ApiError(response.status, parsed);
    }
    return parsed as T;
  }

  createSession(options: {
    manual_detection?: boolean;
    p_detect?: number;
    seed?: number;
  } = {}): Promise<SessionView> {
    return this.request("POST", "/session", options);
  }

  getSession(sid: string): Promise<SessionView> {
    return this.request("GET", `/session/${sid}`);
  }

  select(sid: string, contestId: string, candidateId: string): Promise<SessionView> {
    return this.request("POST", `/session/${sid}/selection`, {
      contest_id: contestId,
      candidate_id: candidateId,
    });
  }

  print(sid: string): Promise<SessionView> {
    return this.request("POST", `/session/${sid}/print`);
  }

  skip(sid: string): Promise<SessionView> {
    return this.request("POST", `/session/${sid}/skip`);
  }

  confirm(sid: string, noticed?: boolean): Promise<SessionView> {
    return this.request("POST", `/session/${sid}/confirm`, noticed === undefined ? {} : { noticed });
  }

  cast(sid: string): Promise<SessionView> {
    return this.request("POST", `/session/${sid}/cast`);
  }

  spoil(sid: string): Promise<SessionView> {
    return this.request("POST", `/session/${sid}/spoil`);
  }

  getMachine(): Promise<MachineView> {
    return this.request("GET", "/machine");
  }

  inject(payload: PayloadDoc): Promise<MachineView> {
    return this.request("POST", "/machine/inject", { payload });
  }

  rebootMachine(): Promise<MachineView> {
    return this.request("POST", "/machine/reboot");
  }

  getElection(): Promise<ElectionView> {
    return this.request("GET", "/election");
  }

  pollEvents(after: number, wait = 0): Promise<EventBatch> {
    return this.request("GET", `/events?after=${after}&wait=${wait}`);
  }
}

/** The admin panel's canned attack: swap the first two candidates of a
 * contest, both directions, exactly what a vote-flipping payload does. */
export function swapPayloadFor(contest: ContestView | ElectionView["contests"][0]): PayloadDoc {
  const [a, b] = contest.candidates;
  return {
    payload_id: "booth-flip",
    effect: {
      kind: "selection_transform",
      contest_id: contest.contest_id,
      mapping: { [a.candidate_id]: b.candidate_id, [b.candidate_id]: a.candidate_id },
    },
  };
}
