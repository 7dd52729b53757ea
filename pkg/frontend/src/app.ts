// Wires the store, the client, and the DOM together. Exported as a function
// so tests can mount it with an injected fetch.

import { ApiError, PreconsultClient, type ClientOptions } from "./api.js";
import { SessionStore } from "./state.js";
import { buildView, render, type ViewElements } from "./view.js";

export interface App {
  store: SessionStore;
  elements: ViewElements;
  start(): Promise<void>;
  send(): Promise<void>;
}

export function mountApp(root: HTMLElement, options: ClientOptions): App {
  const client = new PreconsultClient(options);
  const store = new SessionStore();
  const elements = buildView(root);

  const repaint = () => render(store.view(), elements);

  const start = async () => {
    if (store.view().startDisabled) return;
    store.beginStart();
    repaint();
    try {
      store.applySnapshot(await client.createSession());
    } catch (err) {
      store.failStart(describe(err));
    }
    repaint();
  };

  const send = async () => {
    const text = elements.input.value.trim();
    const vm = store.view();
    if (!text || vm.inputDisabled) return;
    store.beginSend(text);
    repaint();
    try {
      store.applySnapshot(await client.sendReply(store.id, text));
    } catch (err) {
      store.failSend(describe(err));
    }
    repaint();
  };

  elements.startButton.addEventListener("click", () => void start());
  elements.sendButton.addEventListener("click", () => void send());
  elements.input.addEventListener("input", () => {
    store.setDraft(elements.input.value);
    elements.sendButton.disabled =
      store.view().inputDisabled || !elements.input.value.trim();
  });
  elements.input.addEventListener("keydown", (event: KeyboardEvent) => {
    if (event.key === "Enter" && !event.shiftKey) {
      event.preventDefault();
      void send();
    }
  });

  repaint();
  return { store, elements, start, send };
}

function describe(err: unknown): string {
  if (err instanceof ApiError) {
    return err.retryable
      ? `${err.body.message} - please try again`
      : err.body.message;
  }
  return String(err);
}
