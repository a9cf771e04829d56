/** Wiring: one booth, one session at a time, all state changes flowing
 * through the service. Click handlers call the API and merge the returned
 * view; the event feed queues print animation which a timer reveals one step
 * at a time. A 409 means our view raced the real phase — the recovery is
 * always the same: fetch the authoritative session and carry on. */

import { ApiError, BoothApi, SessionView, swapPayloadFor } from "./api.js";
import { EventFeed } from "./events.js";
import {
  ScreenModel,
  applyEvent,
  emptyModel,
  resync,
  tickAnimation,
  withMachine,
  withNotice,
  withSession,
} from "./model.js";
import { BoothElements, buildSkeleton, clearPaper, updateView } from "./view.js";

const TICK_MS = 35;

export class BoothController {
  model: ScreenModel = emptyModel();
  private readonly els: BoothElements;
  private readonly feed: EventFeed;
  private ticker: ReturnType<typeof setInterval> | null = null;

  constructor(
    root: HTMLElement,
    private readonly api: BoothApi,
  ) {
    this.els = buildSkeleton(root);
    this.feed = new EventFeed(
      api.base,
      (event) => {
        this.model = applyEvent(this.model, event);
        this.ensureTicker();
        this.render();
      },
      () => void this.resyncFromServer(),
    );
    root.addEventListener("click", (raw) => {
      const target = (raw.target as HTMLElement).closest<HTMLElement>("[data-action]");
      if (target && !(target as HTMLButtonElement).disabled) {
        void this.dispatch(target.dataset.action!, target.dataset);
      }
    });
  }

  async start(): Promise<void> {
    this.model = withMachine(this.model, await this.api.getMachine());
    await this.newSession();
    this.feed.start();
    this.render();
  }

  stop(): void {
    this.feed.stop();
    if (this.ticker) {
      clearInterval(this.ticker);
      this.ticker = null;
    }
  }

  private async newSession(): Promise<void> {
    // The human at this screen plays the voter, so they decide what they
    // noticed; batch simulations keep the probabilistic model instead.
    const session = await this.api.createSession({ manual_detection: true });
    clearPaper(this.els);
    this.model = resync(this.model, session);
    this.render();
  }

  private async dispatch(action: string, data: DOMStringMap): Promise<void> {
    const sid = this.model.session?.session_id;
    try {
      switch (action) {
        case "select":
          if (sid) this.merge(await this.api.select(sid, data.contest!, data.candidate!));
          break;
        case "print":
          if (sid) this.merge(await this.api.print(sid));
          break;
        case "skip":
          if (sid) this.merge(await this.api.skip(sid));
          break;
        case "confirm-ok":
          if (sid) this.merge(await this.api.confirm(sid, false));
          break;
        case "confirm-flag":
          if (sid) this.merge(await this.api.confirm(sid, true));
          break;
        case "cast":
          if (sid) this.merge(await this.api.cast(sid));
          break;
        case "spoil":
          if (sid) this.merge(await this.api.spoil(sid));
          break;
        case "new-voter":
          await this.newSession();
          break;
        case "inject": {
          const election = await this.api.getElection();
          const machine = await this.api.inject(swapPayloadFor(election.contests[0]));
          this.model = withMachine(this.model, machine);
          break;
        }
        case "reboot": {
          const machine = await this.api.rebootMachine();
          this.model = withMachine(this.model, machine);
          await this.resyncFromServer();
          break;
        }
        default:
          return;
      }
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        await this.resyncFromServer(); // raced the phase; server wins
      } else {
        this.model = withNotice(this.model, String((error as Error).message ?? error));
      }
    }
    this.render();
  }

  /** Merge a mutation response: session state is authoritative immediately,
   * but the paper stays event-driven so printing animates. */
  private merge(session: SessionView): void {
    this.model = withSession(this.model, session);
  }

  private async resyncFromServer(): Promise<void> {
    const sid = this.model.session?.session_id;
    if (!sid) {
      return;
    }
    try {
      this.model = resync(this.model, await this.api.getSession(sid));
    } catch {
      this.model = withNotice(this.model, "service unreachable — retrying");
    }
    this.render();
  }

  private ensureTicker(): void {
    if (this.ticker || this.model.queue.length === 0) {
      return;
    }
    this.ticker = setInterval(() => {
      this.model = tickAnimation(this.model);
      if (this.model.queue.length === 0 && this.ticker) {
        clearInterval(this.ticker);
        this.ticker = null;
      }
      this.render();
    }, TICK_MS);
  }

  private render(): void {
    updateView(this.els, this.model);
  }
}

export async function bootBooth(root: HTMLElement, base = ""): Promise<BoothController> {
  const controller = new BoothController(root, new BoothApi(base));
  await controller.start();
  return controller;
}
