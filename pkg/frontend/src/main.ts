import { mountApp } from "./app.js";

// service base URL: ?api=... beats the page origin default
const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("api") ?? window.location.origin;
const authToken = params.get("token") ?? undefined;

const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app container");
}
mountApp(root, { baseUrl, authToken });
