/** DOM rendering. The overlay (controls) is cheap and re-rendered wholesale
 * on every update; the paper beneath it is managed incrementally and is
 * append-only at the element level — a line marked final is never written
 * again, enforcing in the DOM what the model already guarantees. */

import { ScreenModel, controls, printing } from "./model.js";

export interface BoothElements {
  overlay: HTMLElement;
  paper: HTMLElement;
  admin: HTMLElement;
  alert: HTMLElement;
  notice: HTMLElement;
}

export function buildSkeleton(root: HTMLElement): BoothElements {
  root.innerHTML = `
    <div class="booth">
      <section class="machine-shell">
        <div class="overlay" data-role="overlay"></div>
        <div class="paper" data-role="paper" aria-label="ballot paper"></div>
      </section>
      <aside class="admin" data-role="admin"></aside>
    </div>
    <div class="alert-screen" data-role="alert" hidden></div>
    <div class="notice" data-role="notice" hidden></div>
  `;
  const pick = (role: string) =>
    root.querySelector<HTMLElement>(`[data-role="${role}"]`)!;
  return {
    overlay: pick("overlay"),
    paper: pick("paper"),
    admin: pick("admin"),
    alert: pick("alert"),
    notice: pick("notice"),
  };
}

/** Tear off the previous ballot. The append-only rule is per ballot; a new
 * voter starts from blank paper. */
export function clearPaper(els: BoothElements): void {
  els.paper.replaceChildren();
}

export function updateView(els: BoothElements, model: ScreenModel): void {
  els.overlay.innerHTML = renderOverlay(model);
  updatePaper(els.paper, model);
  els.admin.innerHTML = renderAdmin(model);
  renderAlert(els.alert, model);
  els.notice.hidden = !model.notice;
  els.notice.textContent = model.notice ?? "";
}

function esc(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function renderOverlay(model: ScreenModel): string {
  const session = model.session;
  if (!session) {
    return `<p class="dim">Starting a session…</p>`;
  }
  if (controls.alerting(model)) {
    // The full-screen alert element carries the actions; keep the glass bare.
    return `<p class="dim">Alert raised — see attendant screen.</p>`;
  }
  if (controls.sessionOver(model)) {
    const ballot = session.ballot;
    return `
      <h2>Ballot ${esc(ballot?.disposition ?? "")}</h2>
      <p data-role="ballot-id" class="dim">${esc(ballot?.ballot_id ?? "")}</p>
      <button data-action="new-voter">Next voter</button>
    `;
  }
  if (controls.canConfirm(model) || (session.phase.kind === "awaiting_confirmation" && printing(model))) {
    const review = session.review;
    const busy = printing(model);
    const disabled = busy ? "disabled" : "";
    return `
      <h2>Check the paper</h2>
      <p>You chose: <strong data-role="intent-text">${esc(review?.intent_text ?? "")}</strong></p>
      <p class="dim">${busy ? "Printing behind the glass…" : "Compare with the printed line below."}</p>
      <div class="row">
        <button data-action="confirm-ok" ${disabled}>It matches — confirm</button>
        <button data-action="confirm-flag" class="danger" ${disabled}>That is not what I chose</button>
      </div>
    `;
  }
  if (controls.canCast(model)) {
    return `
      <h2>All contests recorded</h2>
      <p class="dim">Review the full ballot through the glass, then decide.</p>
      <div class="row">
        <button data-action="cast">Cast ballot</button>
        <button data-action="spoil" class="danger">Spoil ballot</button>
      </div>
    `;
  }
  if (controls.canSelect(model) && session.contest) {
    const contest = session.contest;
    const chosen = new Set(session.intent[contest.contest_id] ?? []);
    const index = (session.phase.contest_index ?? 0) + 1;
    const buttons = contest.candidates
      .map(
        (candidate) => `
        <button data-action="select"
                data-contest="${esc(contest.contest_id)}"
                data-candidate="${esc(candidate.candidate_id)}"
                class="candidate ${chosen.has(candidate.candidate_id) ? "selected" : ""}"
                aria-pressed="${chosen.has(candidate.candidate_id)}">
          ${esc(candidate.name)}
        </button>`,
      )
      .join("");
    return `
      <p class="dim">Contest ${index} of ${session.contest_count}</p>
      <h2>${esc(contest.title)}</h2>
      <p class="dim">Vote for ${contest.vote_for}</p>
      <div class="candidates">${buttons}</div>
      <div class="row">
        <button data-action="print">Print selection</button>
        <button data-action="skip">Skip this contest</button>
      </div>
    `;
  }
  return `<p class="dim">${esc(session.phase_label)}</p>`;
}

function updatePaper(paperEl: HTMLElement, model: ScreenModel): void {
  for (const line of model.paper) {
    let el = paperEl.querySelector<HTMLElement>(`[data-seq="${line.seq}"]`);
    if (!el) {
      el = paperEl.ownerDocument.createElement("div");
      el.className = "paper-line";
      el.dataset.seq = String(line.seq);
      el.dataset.contest = line.contestId;
      paperEl.appendChild(el);
    }
    if (el.dataset.final === "1") {
      continue; // a finalized line is never written again
    }
    el.textContent = line.text;
    el.classList.toggle("printing", !line.final);
    if (line.final) {
      el.dataset.final = "1";
    }
  }
}

function renderAdmin(model: ScreenModel): string {
  const machine = model.machine;
  if (!machine) {
    return "";
  }
  const hot = machine.active_payload_ids.length > 0;
  return `
    <h3>Machine</h3>
    <dl>
      <dt>Kind</dt><dd data-role="machine-kind">${esc(machine.machine_kind)}</dd>
      <dt>Boot epoch</dt><dd data-role="boot-epoch">${machine.boot_epoch}</dd>
      <dt>Payloads</dt>
      <dd data-role="payload-indicator" class="${hot ? "hot" : "clean"}">
        ${hot ? esc(machine.active_payload_ids.join(", ")) : "none"}
      </dd>
    </dl>
    <div class="row">
      <button data-action="inject" class="danger">Inject vote flip</button>
      <button data-action="reboot">Reboot machine</button>
    </div>
  `;
}

function renderAlert(alertEl: HTMLElement, model: ScreenModel): void {
  if (!controls.alerting(model)) {
    alertEl.hidden = true;
    alertEl.innerHTML = "";
    return;
  }
  alertEl.hidden = false;
  alertEl.innerHTML = `
    <div class="alert-box">
      <h2>The paper does not match the voter's choice</h2>
      <p>This ballot must be spoiled and the machine taken out of service for review.</p>
      <button data-action="spoil" class="danger">Spoil ballot</button>
    </div>
  `;
}
