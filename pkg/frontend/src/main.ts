import { GateApi } from "./api.js";
import { createApp } from "./app.js";

const params = new URLSearchParams(window.location.search);
const base = params.get("server") ?? "";
const root = document.getElementById("app");
if (!root) throw new Error("missing #app mount point");
const app = createApp(root, new GateApi(base), { pollMs: Number(params.get("poll") ?? 1000) });
app.start();
