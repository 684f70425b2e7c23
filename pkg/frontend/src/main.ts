import { App } from "./app.js";

// Served by the session itself, so same-origin everywhere.
const app = new App({ doc: document, base: "" });
app.start();

// handy for poking at the live session from the console
(window as any).viewer = app;
