/** Screen state and the rules for changing it, kept pure so tests can drive
 * every transition without a DOM or a network.
 *
 * Two invariants carry the design. The paper is append-only: once a line's
 * completion step has been applied, nothing may change its text again. And
 * the confirm control stays disabled until the animation for the line being
 * reviewed has fully played out — the voter confirms what is on the paper,
 * not what is about to be. */

import { MachineView, ServiceEvent, SessionView } from "./api.js";

export interface PaperLine {
  seq: number;
  contestId: string;
  text: string;
  final: boolean;
}

export type AnimationStep =
  | { kind: "start"; seq: number; contestId: string }
  | { kind: "progress"; seq: number; text: string }
  | { kind: "complete"; seq: number; text: string };

export interface ScreenModel {
  session: SessionView | null;
  machine: MachineView | null;
  paper: PaperLine[];
  queue: AnimationStep[];
  notice: string | null;
}

export function emptyModel(): ScreenModel {
  return { session: null, machine: null, paper: [], queue: [], notice: null };
}

/** Merge a fresh session view without touching the paper: lines reach the
 * paper only through animation steps (or a full resync). */
export function withSession(model: ScreenModel, session: SessionView): ScreenModel {
  return { ...model, session, notice: null };
}

export function withMachine(model: ScreenModel, machine: MachineView): ScreenModel {
  return { ...model, machine };
}

export function withNotice(model: ScreenModel, notice: string | null): ScreenModel {
  return { ...model, notice };
}

/** Authoritative reset from the server: the paper becomes exactly the lines
 * the service reports, all final, and any queued animation is obsolete. */
export function resync(model: ScreenModel, session: SessionView): ScreenModel {
  const paper = session.lines.map((line) => ({
    seq: line.seq,
    contestId: line.contest_id,
    text: line.text,
    final: true,
  }));
  return { ...model, session, paper, queue: [] };
}

/** Fold one service event into the model. Print events are queued rather
 * than applied, so the view can reveal them at its own pace; events for
 * other sessions are ignored except machine-level ones, which always apply. */
export function applyEvent(model: ScreenModel, event: ServiceEvent): ScreenModel {
  const sid = model.session?.session_id;
  switch (event.kind) {
    case "print_started":
      if (event.session_id !== sid) return model;
      return queueStep(model, {
        kind: "start",
        seq: event.seq as number,
        contestId: event.contest_id as string,
      });
    case "print_progress":
      if (event.session_id !== sid) return model;
      return queueStep(model, {
        kind: "progress",
        seq: event.seq as number,
        text: event.text_so_far as string,
      });
    case "line_complete":
      if (event.session_id !== sid) return model;
      return queueStep(model, {
        kind: "complete",
        seq: event.seq as number,
        text: event.text as string,
      });
    case "phase_changed":
      if (event.session_id !== sid || !model.session) return model;
      return {
        ...model,
        session: {
          ...model.session,
          phase: event.phase as SessionView["phase"],
          phase_label: event.phase_label as string,
        },
      };
    case "machine_rebooted":
    case "payload_injected":
      if (!model.machine) return model;
      return {
        ...model,
        machine: {
          ...model.machine,
          active_payload_ids: event.active_payload_ids as string[],
          boot_epoch: (event.boot_epoch as number) ?? model.machine.boot_epoch,
        },
      };
    default:
      return model;
  }
}

function queueStep(model: ScreenModel, step: AnimationStep): ScreenModel {
  return { ...model, queue: [...model.queue, step] };
}

/** Apply the next queued animation step. Steps aimed at a finalized line are
 * discarded — the append-only rule outranks whatever arrives late. */
export function tickAnimation(model: ScreenModel): ScreenModel {
  const [step, ...queue] = model.queue;
  if (!step) {
    return model;
  }
  const paper = model.paper.slice();
  const at = paper.findIndex((line) => line.seq === step.seq);
  if (step.kind === "start") {
    if (at === -1) {
      paper.push({ seq: step.seq, contestId: step.contestId, text: "", final: false });
    }
  } else if (at !== -1 && !paper[at].final) {
    paper[at] = {
      ...paper[at],
      text: step.text,
      final: step.kind === "complete",
    };
  }
  return { ...model, paper, queue };
}

/** True while any line is mid-print: queued steps remain, a line on the
 * paper has not reached its completion step, or the session reports more
 * printed lines than the paper has finalized (the events are still in
 * flight — confirming before they land would mean confirming unseen ink). */
export function printing(model: ScreenModel): boolean {
  const finalized = model.paper.filter((line) => line.final).length;
  const reported = model.session?.lines.length ?? 0;
  return (
    model.queue.length > 0 ||
    model.paper.some((line) => !line.final) ||
    finalized < reported
  );
}

function phaseKind(model: ScreenModel): string {
  return model.session?.phase.kind ?? "";
}

/** Which controls exist, per phase. The view renders nothing for a control
 * whose predicate is false, so the UI cannot issue a forbidden request. */
export const controls = {
  canSelect(model: ScreenModel): boolean {
    return phaseKind(model) === "contest_active";
  },
  canPrint(model: ScreenModel): boolean {
    return phaseKind(model) === "contest_active";
  },
  canSkip(model: ScreenModel): boolean {
    return phaseKind(model) === "contest_active";
  },
  canConfirm(model: ScreenModel): boolean {
    return phaseKind(model) === "awaiting_confirmation" && !printing(model);
  },
  canCast(model: ScreenModel): boolean {
    return phaseKind(model) === "complete";
  },
  canSpoil(model: ScreenModel): boolean {
    return ["contest_active", "awaiting_confirmation", "complete", "alert_raised"].includes(
      phaseKind(model),
    );
  },
  alerting(model: ScreenModel): boolean {
    return phaseKind(model) === "alert_raised";
  },
  sessionOver(model: ScreenModel): boolean {
    return ["cast", "spoiled"].includes(phaseKind(model));
  },
};
