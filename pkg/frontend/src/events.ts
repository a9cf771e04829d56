/** Server-sent events over fetch, with a reconnect-and-resync contract.
 *
 * EventSource would do the parsing for us, but a hand-rolled reader works in
 * every runtime the tests use and keeps the cursor logic explicit: the feed
 * remembers the last event id it delivered, reconnects from that cursor when
 * the stream drops, and asks the owner to resync its view because events may
 * describe a world that moved on while we were gone. */

import { ServiceEvent } from "./api.js";

export interface ParsedChunk {
  events: ServiceEvent[];
  rest: string;
}

/** Split a buffer of SSE text into complete frames plus the unfinished tail.
 * Comment frames (keep-alives) are dropped. */
export function parseSseBuffer(buffer: string): ParsedChunk {
  const frames = buffer.split("\n\n");
  const rest = frames.pop() ?? "";
  const events: ServiceEvent[] = [];
  for (const frame of frames) {
    for (const line of frame.split("\n")) {
      if (line.startsWith("data: ")) {
        events.push(JSON.parse(line.slice("data: ".length)) as ServiceEvent);
      }
    }
  }
  return { events, rest };
}

export class EventFeed {
  lastId = -1;
  private stopped = false;
  private controller: AbortController | null = null;

  constructor(
    private readonly base: string,
    private readonly onEvent: (event: ServiceEvent) => void,
    private readonly onResync: () => void,
    private readonly retryDelayMs = 250,
  ) {}

  start(): void {
    void this.run();
  }

  stop(): void {
    this.stopped = true;
    this.controller?.abort();
  }

  private async run(): Promise<void> {
    let first = true;
    while (!this.stopped) {
      if (!first) {
        await new Promise((resolve) => setTimeout(resolve, this.retryDelayMs));
        if (this.stopped) {
          return;
        }
        this.onResync();
      }
      first = false;
      try {
        await this.readStream();
      } catch {
        // Dropped or refused; the loop reconnects from the cursor.
      }
    }
  }

  private async readStream(): Promise<void> {
    this.controller = new AbortController();
    const response = await fetch(`${this.base}/events?after=${this.lastId}`, {
      headers: { accept: "text/event-stream" },
      signal: this.controller.signal,
    });
    if (!response.ok || !response.body) {
      throw new Error(`event stream refused (${response.status})`);
    }
    const reader = response.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    for (;;) {
      const { done, value } = await reader.read();
      if (done) {
        return;
      }
      buffer += decoder.decode(value, { stream: true });
      const { events, rest } = parseSseBuffer(buffer);
      buffer = rest;
      for (const event of events) {
        this.lastId = Math.max(this.lastId, event.id);
        if (!this.stopped) {
          this.onEvent(event);
        }
      }
    }
  }
}
