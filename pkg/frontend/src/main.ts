/** Browser entry point: session entry form, then the rating view. */

import { RatingApi } from "./api.js";
import { SessionController } from "./session.js";

export function bootstrap(root: HTMLElement, baseUrl = ""): SessionController {
  const doc = root.ownerDocument;
  const stage = doc.createElement("div");
  stage.id = "stage";
  const controller = new SessionController(new RatingApi(baseUrl), stage);

  const form = doc.createElement("form");
  form.id = "entry-form";

  const observer = doc.createElement("input");
  observer.id = "observer-id";
  observer.placeholder = "observer id";
  observer.required = true;
  form.appendChild(observer);

  const imageSet = doc.createElement("input");
  imageSet.id = "image-set";
  imageSet.placeholder = "image set";
  imageSet.required = true;
  form.appendChild(imageSet);

  const begin = doc.createElement("button");
  begin.type = "submit";
  begin.textContent = "Begin session";
  form.appendChild(begin);

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    void controller.start(observer.value.trim(), imageSet.value.trim());
  });

  doc.addEventListener("keydown", (event) => {
    controller.handleKey(event.key);
  });

  root.appendChild(form);
  root.appendChild(stage);
  return controller;
}

const appRoot = typeof document !== "undefined" && document.getElementById("app");
if (appRoot) bootstrap(appRoot);
