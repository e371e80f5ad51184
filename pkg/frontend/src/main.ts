import { LabelerApp } from "./app.js";

const root = document.getElementById("app");
if (root === null) {
  throw new Error("missing #app container");
}
const app = new LabelerApp(root);
void app.start();
