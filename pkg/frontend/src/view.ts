// Thin DOM layer: builds the static structure once, then re-renders the
// whole view model on every change. No state lives in the DOM.

import type { ViewModel } from "./state.js";

export interface ViewElements {
  root: HTMLElement;
  startButton: HTMLButtonElement;
  messages: HTMLElement;
  input: HTMLTextAreaElement;
  sendButton: HTMLButtonElement;
  roundIndicator: HTMLElement;
  statusBanner: HTMLElement;
  recordCc: HTMLElement;
  recordHpi: HTMLElement;
  recordPh: HTMLElement;
  triageList: HTMLElement;
  progressFill: HTMLElement;
  progressLabel: HTMLElement;
  errorBox: HTMLElement;
}

export function buildView(root: HTMLElement): ViewElements {
  root.innerHTML = `
    <header class="topbar">
      <button data-ref="start">Start consultation</button>
      <span class="round" data-ref="round"></span>
      <span class="banner" data-ref="banner"></span>
    </header>
    <main class="layout">
      <section class="chat">
        <div class="messages" data-ref="messages"></div>
        <div class="error" data-ref="error" hidden></div>
        <div class="composer">
          <textarea data-ref="input" rows="2"
            placeholder="Describe your answer here"></textarea>
          <button data-ref="send">Send</button>
        </div>
      </section>
      <aside class="panels">
        <section class="panel">
          <h2>Record</h2>
          <dl>
            <dt>Chief Complaint</dt><dd data-ref="cc"></dd>
            <dt>History of Present Illness</dt><dd data-ref="hpi"></dd>
            <dt>Past History</dt><dd data-ref="ph"></dd>
          </dl>
        </section>
        <section class="panel">
          <h2>Triage</h2>
          <ul data-ref="triage"></ul>
        </section>
        <section class="panel">
          <h2>Progress</h2>
          <div class="progress"><div class="fill" data-ref="fill"></div></div>
          <span data-ref="progress-label"></span>
        </section>
      </aside>
    </main>`;

  const ref = <T extends HTMLElement>(name: string): T => {
    const el = root.querySelector<T>(`[data-ref="${name}"]`);
    if (!el) throw new Error(`missing element ${name}`);
    return el;
  };

  return {
    root,
    startButton: ref<HTMLButtonElement>("start"),
    messages: ref("messages"),
    input: ref<HTMLTextAreaElement>("input"),
    sendButton: ref<HTMLButtonElement>("send"),
    roundIndicator: ref("round"),
    statusBanner: ref("banner"),
    recordCc: ref("cc"),
    recordHpi: ref("hpi"),
    recordPh: ref("ph"),
    triageList: ref("triage"),
    progressFill: ref("fill"),
    progressLabel: ref("progress-label"),
    errorBox: ref("error"),
  };
}

const STATUS_TEXT: Record<string, string> = {
  active: "",
  completed: "Consultation complete - please proceed to the suggested department.",
  failed_incomplete: "Consultation reached the round limit before finishing.",
};

export function render(vm: ViewModel, el: ViewElements): void {
  el.startButton.disabled = vm.startDisabled;
  el.roundIndicator.textContent = vm.round > 0 ? `Round ${vm.round}` : "";

  el.messages.textContent = "";
  for (const bubble of vm.bubbles) {
    const div = document.createElement("div");
    div.className = `bubble ${bubble.who}${bubble.pending ? " pending" : ""}`;
    div.textContent = bubble.text;
    el.messages.appendChild(div);
  }

  el.recordCc.textContent = vm.record.cc || "(not collected yet)";
  el.recordHpi.textContent = vm.record.hpi || "(not collected yet)";
  el.recordPh.textContent = vm.record.ph || "(not collected yet)";

  el.triageList.textContent = "";
  if (vm.triage) {
    const rows = [...vm.triage.primary, ...vm.triage.secondary];
    for (const candidate of rows) {
      const li = document.createElement("li");
      li.textContent = `${candidate.department} (${Math.round(candidate.confidence * 100)}%)`;
      el.triageList.appendChild(li);
    }
  }

  const pct = Math.round((vm.completedSubtasks / vm.totalSubtasks) * 100);
  el.progressFill.style.width = `${pct}%`;
  const group = vm.activeGroup ? ` - ${vm.activeGroup}` : "";
  el.progressLabel.textContent = `${vm.completedSubtasks}/${vm.totalSubtasks}${group}`;

  el.input.disabled = vm.inputDisabled;
  el.sendButton.disabled = vm.inputDisabled || !vm.draft.trim();
  if (el.input.value !== vm.draft) {
    el.input.value = vm.draft;
  }

  const error = vm.startError ?? vm.replyError;
  el.errorBox.hidden = !error;
  el.errorBox.textContent = error ?? "";

  el.statusBanner.textContent = vm.status ? STATUS_TEXT[vm.status] ?? "" : "";
}
