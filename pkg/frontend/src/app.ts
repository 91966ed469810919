// Workbench single-page app: dataset browser, workflow designer, job
// monitor and chart view. All state shown here comes from API responses;
// the browser never sees keys or dataset payloads.

import { ApiClient, ApiError } from "./api.js";
import { renderChartSvg } from "./charts.js";
import { WorkflowDraft } from "./draft.js";
import { JobView } from "./jobview.js";
import { JobPoller } from "./poller.js";
import type { AgreementRecord, DatasetRecord, JobState, PrepStep } from "./types.js";

const $ = <T extends HTMLElement>(selector: string): T => {
  const node = document.querySelector(selector);
  if (!node) throw new Error(`missing element ${selector}`);
  return node as T;
};

const state = {
  api: null as ApiClient | null,
  poller: null as JobPoller | null,
  datasets: [] as DatasetRecord[],
  agreements: [] as AgreementRecord[],
  draft: new WorkflowDraft(),
  principal: "",
  serverIssue: null as { stepIndex: number | null; message: string } | null,
};

function onSessionExpired(): void {
  state.api = null;
  $("#app").classList.add("hidden");
  $("#login").classList.remove("hidden");
  ($("#login-error") as HTMLElement).textContent = "session expired; sign in again";
}

function guard<T>(work: () => Promise<T>): Promise<T | undefined> {
  return work().catch((error) => {
    if (error instanceof ApiError && error.sessionExpired) {
      onSessionExpired();
      return undefined;
    }
    throw error;
  });
}

// ---- login -----------------------------------------------------------------

async function login(): Promise<void> {
  const endpoint = ($("#endpoint") as HTMLInputElement).value.trim();
  const principal = ($("#principal") as HTMLInputElement).value.trim();
  const secret = ($("#secret") as HTMLInputElement).value;
  const api = new ApiClient(endpoint);
  try {
    await api.login(principal, secret);
  } catch (error) {
    ($("#login-error") as HTMLElement).textContent =
      error instanceof ApiError ? `${error.code}: ${error.message}` : String(error);
    return;
  }
  state.api = api;
  state.poller = new JobPoller(api, 2000);
  state.principal = principal;
  $("#login").classList.add("hidden");
  $("#app").classList.remove("hidden");
  $("#whoami").textContent = principal;
  await refreshDatasets();
}

// ---- dataset browser ----------------------------------------------------------

async function refreshDatasets(): Promise<void> {
  await guard(async () => {
    state.datasets = await state.api!.listDatasets();
    state.agreements = await state.api!.listAgreements();
    renderDatasets();
    renderDraft();
  });
}

function agreementStatus(dataset: DatasetRecord): string {
  if (dataset.owner_id === state.principal) return "owned";
  const agreement = state.agreements.find(
    (a) =>
      a.dataset_id === dataset.dataset_id &&
      a.consumer_id === state.principal &&
      a.status === "active",
  );
  return agreement ? "shared with you" : "request access";
}

function renderDatasets(): void {
  const host = $("#datasets");
  host.innerHTML = "";
  for (const dataset of state.datasets) {
    const card = document.createElement("div");
    card.className = "card dataset-card";
    const status = agreementStatus(dataset);
    const chips = dataset.schema
      .map(([name, type]) => `<span class="chip">${name}: ${type}</span>`)
      .join(" ");
    card.innerHTML = `
      <h3>${dataset.name}</h3>
      <div class="meta">${dataset.row_count} rows · owner ${dataset.owner_id}</div>
      <div class="chips">${chips}</div>
      <div class="status ${status === "request access" ? "locked" : "ok"}">${status}</div>
    `;
    const selectable = status !== "request access";
    if (selectable) {
      const button = document.createElement("button");
      button.textContent = "add to workflow";
      button.onclick = () => {
        state.draft.selectDataset(dataset);
        renderDraft();
      };
      card.appendChild(button);
    }
    host.appendChild(card);
  }
}

// ---- designer ----------------------------------------------------------------------

function columnOptions(): string[] {
  return (state.draft.outputSchema() ?? []).map(([name]) => name);
}

function stepSummary(step: PrepStep): string {
  switch (step.op) {
    case "create_column":
      return `create ${step.name}`;
    case "drop_columns":
      return `drop ${step.names.join(", ")}`;
    case "filter_rows":
      return "filter rows";
    case "rename_column":
      return `rename ${step.from} -> ${step.to}`;
    case "merge":
      return `merge on ${step.keys.join(", ")} (${step.join_type})`;
    case "fill_null":
      return `fill ${step.column} (${step.strategy.kind})`;
    case "aggregate":
      return `aggregate by ${step.group_by.join(", ") || "(all)"}`;
  }
}

function renderDraft(): void {
  const host = $("#steps");
  host.innerHTML = "";
  const issues = state.draft.validate();
  state.draft.steps.forEach((step, index) => {
    const row = document.createElement("div");
    row.className = "step-row";
    const clientIssue = issues.find((i) => i.stepIndex === index);
    const serverIssue =
      state.serverIssue && state.serverIssue.stepIndex === index ? state.serverIssue : null;
    row.innerHTML = `<span class="step-index">${index}</span> <span>${stepSummary(step)}</span>`;
    for (const [label, delta] of [
      ["up", -1],
      ["down", 1],
    ] as const) {
      const move = document.createElement("button");
      move.textContent = label;
      move.onclick = () => {
        state.draft.moveStep(index, index + delta);
        state.serverIssue = null;
        renderDraft();
      };
      row.appendChild(move);
    }
    const remove = document.createElement("button");
    remove.textContent = "remove";
    remove.onclick = () => {
      state.draft.removeStep(index);
      state.serverIssue = null;
      renderDraft();
    };
    row.appendChild(remove);
    const issue = serverIssue ?? clientIssue;
    if (issue) {
      const message = document.createElement("div");
      message.className = "inline-error";
      message.dataset.stepIndex = String(index);
      message.textContent = `step ${index}: ${issue.message}`;
      row.appendChild(message);
    }
    host.appendChild(row);
  });

  const datasetsHost = $("#draft-datasets");
  datasetsHost.innerHTML = state.draft.datasets
    .map((d) => `<span class="chip">${d.name}</span>`)
    .join(" ");

  const generalIssues = issues.filter((i) => i.stepIndex === null);
  $("#draft-issues").innerHTML = generalIssues
    .map((i) => `<div class="inline-error">${i.message}</div>`)
    .join("");
  if (state.serverIssue && state.serverIssue.stepIndex === null) {
    $("#draft-issues").innerHTML += `<div class="inline-error">${state.serverIssue.message}</div>`;
  }
  ($("#submit-job") as HTMLButtonElement).disabled = !state.draft.submitEnabled;
  const columns = columnOptions();
  for (const id of ["#algo-target", "#algo-feature", "#chart-x", "#chart-y", "#step-column"]) {
    const select = document.querySelector(id) as HTMLSelectElement | null;
    if (select) {
      const current = select.value;
      select.innerHTML = columns.map((c) => `<option>${c}</option>`).join("");
      if (columns.includes(current)) select.value = current;
    }
  }
}

function addStepFromForm(): void {
  const kind = ($("#step-kind") as HTMLSelectElement).value;
  const column = ($("#step-column") as HTMLSelectElement).value;
  const argument = ($("#step-arg") as HTMLInputElement).value;
  let step: PrepStep | null = null;
  if (kind === "ts_hour") {
    step = {
      op: "create_column",
      name: argument || `${column}_hour`,
      expr: { op: "ts_hour", arg: { op: "col", name: column } },
    };
  } else if (kind === "filter_ge") {
    step = {
      op: "filter_rows",
      pred: {
        op: "cmp",
        cmp: "ge",
        left: { op: "col", name: column },
        right: { op: "lit", value: Number(argument) },
      },
    };
  } else if (kind === "drop") {
    step = { op: "drop_columns", names: [column] };
  } else if (kind === "rename") {
    step = { op: "rename_column", from: column, to: argument };
  } else if (kind === "fill_mean") {
    step = { op: "fill_null", column, strategy: { kind: "mean" } };
  }
  if (step) {
    state.draft.addStep(step);
    state.serverIssue = null;
    renderDraft();
  }
}

function readAlgorithmForm(): void {
  const kind = ($("#algo-kind") as HTMLSelectElement).value;
  const target = ($("#algo-target") as HTMLSelectElement).value;
  const feature = ($("#algo-feature") as HTMLSelectElement).value;
  if (kind === "linear_regression") {
    state.draft.algorithm = { algorithm: "linear_regression", target, features: [feature] };
  } else if (kind === "descriptive_stats") {
    state.draft.algorithm = { algorithm: "descriptive_stats", columns: [target] };
  } else if (kind === "kmeans") {
    state.draft.algorithm = { algorithm: "kmeans", k: 3, features: [target, feature], seed: 1 };
  } else {
    state.draft.algorithm = { algorithm: "pearson_correlation", col_a: target, col_b: feature };
  }
  renderDraft();
}

function readChartForm(): void {
  const kind = ($("#chart-kind") as HTMLSelectElement).value as
    | "line"
    | "bar"
    | "scatter"
    | "histogram";
  const x = ($("#chart-x") as HTMLSelectElement).value;
  const y = ($("#chart-y") as HTMLSelectElement).value;
  state.draft.chart =
    kind === "histogram" ? { chart_type: kind, column: x } : { chart_type: kind, x, y: [y] };
  renderDraft();
}

async function submitJob(): Promise<void> {
  const whenValue = ($("#schedule-at") as HTMLInputElement).value;
  if (whenValue) {
    const atMs = new Date(whenValue).getTime();
    if (atMs <= Date.now()) {
      state.serverIssue = { stepIndex: null, message: "scheduled time is in the past" };
      renderDraft();
      return;
    }
    state.draft.schedule = { type: "at", at_ms: atMs };
  } else {
    state.draft.schedule = { type: "immediate" };
  }
  await guard(async () => {
    try {
      const workflow = await state.api!.createWorkflow(state.draft.toDocument());
      const job = await state.api!.submitJob(workflow.workflow_id, state.draft.schedule);
      state.serverIssue = null;
      watchJob(job.job_id);
    } catch (error) {
      if (error instanceof ApiError) {
        state.serverIssue = { stepIndex: error.stepIndex, message: `${error.code}: ${error.message}` };
        renderDraft();
        return;
      }
      throw error;
    }
  });
}

async function saveApplication(): Promise<void> {
  await guard(async () => {
    const workflow = await state.api!.createWorkflow(state.draft.toDocument());
    await state.api!.saveApplication(workflow.workflow_id, state.draft.name);
    $("#designer-note").textContent = `saved application "${state.draft.name}"`;
  });
}

// ---- monitor + chart ------------------------------------------------------------------

function watchJob(jobId: string): void {
  guard(async () => {
    const record = await state.api!.jobStatus(jobId);
    state.poller!.watch(record, (view) => renderJob(view));
  });
}

function renderJob(view: JobView): void {
  const host = $("#monitor");
  let panel = document.querySelector(`[data-job="${view.jobId}"]`) as HTMLElement | null;
  if (!panel) {
    panel = document.createElement("div");
    panel.className = "card job-card";
    panel.dataset.job = view.jobId;
    host.prepend(panel);
  }
  const timeline = view
    .phasesReached()
    .map(
      ({ phase, at }) =>
        `<li class="phase ${phase}"><span>${phase}</span><time>${new Date(at).toISOString()}</time></li>`,
    )
    .join("");
  const banner =
    view.state === "failed" && view.error
      ? `<div class="error-banner">failed at ${view.error.code}: ${view.error.message}</div>`
      : "";
  panel.innerHTML = `
    <h3>job ${view.jobId.slice(0, 8)} · <span class="state ${view.state}">${view.state}</span></h3>
    ${banner}
    <ol class="timeline">${timeline}</ol>
    <div class="chart-slot"></div>
  `;
  if (view.resultsAvailable) {
    void renderResult(view.jobId, panel.querySelector(".chart-slot") as HTMLElement);
  }
}

async function renderResult(jobId: string, slot: HTMLElement): Promise<void> {
  await guard(async () => {
    const results = await state.api!.jobResults(jobId);
    const series = results.data_series;
    const r2 = results.result_set.metrics["r_squared"];
    const caption = typeof r2 === "number" ? `R² = ${r2.toFixed(4)}` : "";
    if (series) {
      slot.innerHTML = renderChartSvg(series, { caption });
    } else {
      slot.textContent = "no chart for this workflow";
    }
  });
}

// ---- wiring -----------------------------------------------------------------------------

export function boot(): void {
  $("#login-button").onclick = () => void login();
  $("#refresh-datasets").onclick = () => void refreshDatasets();
  $("#add-step").onclick = () => addStepFromForm();
  $("#algo-apply").onclick = () => readAlgorithmForm();
  $("#chart-apply").onclick = () => readChartForm();
  $("#submit-job").onclick = () => void submitJob();
  $("#save-app").onclick = () => void saveApplication();
  ($("#draft-name") as HTMLInputElement).oninput = (event) => {
    state.draft.name = (event.target as HTMLInputElement).value || "workflow";
  };
}

if (typeof document !== "undefined" && document.readyState !== "loading") {
  boot();
} else if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", boot);
}
