import { mountApp } from "./app.js";

function apiBase(): string {
  const fromQuery = new URLSearchParams(location.search).get("api");
  if (fromQuery) return fromQuery.replace(/\/$/, "");
  return "";
}

function raterId(): string {
  const fromQuery = new URLSearchParams(location.search).get("rater");
  if (fromQuery) {
    localStorage.setItem("vqanle-rater", fromQuery);
    return fromQuery;
  }
  const saved = localStorage.getItem("vqanle-rater");
  if (saved) return saved;
  const entered = window.prompt("Rater id:")?.trim() || `rater-${Date.now()}`;
  localStorage.setItem("vqanle-rater", entered);
  return entered;
}

const root = document.getElementById("app");
if (!root) throw new Error("missing #app container");
mountApp(root, apiBase(), raterId());
