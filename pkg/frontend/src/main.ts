import { bootBooth } from "./app.js";

const root = document.getElementById("app");
if (root) {
  void bootBooth(root);
}
