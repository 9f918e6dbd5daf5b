import { ServiceClient } from "./api.js";
import { App } from "./app.js";

// Service origin: ?service=http://host:port overrides same-origin default.
const params = new URLSearchParams(window.location.search);
const base = params.get("service") ?? "";

const root = document.getElementById("app");
if (root === null) throw new Error("missing #app mount point");
new App(root, new ServiceClient(base));
