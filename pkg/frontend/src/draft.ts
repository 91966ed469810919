// WorkflowDraft: the designer's working state. Client-side validation
// keeps the submit button honest; serialization produces exactly the
// workflow document the platform accepts, so a valid draft round-trips
// through the server validator unchanged.

import type {
  AlgorithmSpec,
  ChartSpec,
  ColumnType,
  DatasetRecord,
  PrepStep,
  SchemaEntry,
  WorkflowDocument,
} from "./types.js";

export interface DraftIssue {
  message: string;
  stepIndex: number | null; // null = not a pipeline-step problem
}

export type ScheduleChoice = { type: "immediate" } | { type: "at"; at_ms: number };

const NUMERIC: ColumnType[] = ["int64", "float64"];

export class WorkflowDraft {
  name = "workflow";
  datasets: DatasetRecord[] = [];
  steps: PrepStep[] = [];
  algorithm: AlgorithmSpec | null = null;
  chart: ChartSpec | null = null;
  schedule: ScheduleChoice = { type: "immediate" };

  selectDataset(dataset: DatasetRecord): void {
    if (!this.datasets.some((d) => d.dataset_id === dataset.dataset_id)) {
      this.datasets.push(dataset);
    }
  }

  removeDataset(datasetId: string): void {
    this.datasets = this.datasets.filter((d) => d.dataset_id !== datasetId);
  }

  addStep(step: PrepStep): void {
    this.steps.push(step);
  }

  removeStep(index: number): void {
    this.steps.splice(index, 1);
  }

  moveStep(from: number, to: number): void {
    if (from < 0 || from >= this.steps.length || to < 0 || to >= this.steps.length) return;
    const [step] = this.steps.splice(from, 1);
    this.steps.splice(to, 0, step);
  }

  /** Schema after applying the draft's steps (client-side prediction). */
  outputSchema(): SchemaEntry[] | null {
    if (this.datasets.length === 0) return null;
    let schema: SchemaEntry[] = [...this.datasets[0].schema];
    const others = new Map(this.datasets.slice(1).map((d) => [d.dataset_id, d.schema]));
    for (const step of this.steps) {
      const next = applyStepToSchema(schema, step, others);
      if (next === null) return null;
      schema = next;
    }
    return schema;
  }

  /** All validation problems; submit stays disabled until this is empty. */
  validate(now: number = Date.now()): DraftIssue[] {
    const issues: DraftIssue[] = [];
    if (this.datasets.length === 0) {
      issues.push({ message: "select at least one dataset", stepIndex: null });
      return issues;
    }
    let schema: SchemaEntry[] = [...this.datasets[0].schema];
    const others = new Map(this.datasets.slice(1).map((d) => [d.dataset_id, d.schema]));
    this.steps.forEach((step, i) => {
      const problem = stepProblem(schema, step, others);
      if (problem) {
        issues.push({ message: problem, stepIndex: i });
        return;
      }
      schema = applyStepToSchema(schema, step, others)!;
    });

    const names = new Set(schema.map(([n]) => n));
    const types = new Map(schema);
    if (!this.algorithm) {
      issues.push({ message: "choose an algorithm", stepIndex: null });
    } else {
      for (const column of algorithmColumns(this.algorithm)) {
        if (!names.has(column)) {
          issues.push({ message: `algorithm references unknown column "${column}"`, stepIndex: null });
        } else if (!NUMERIC.includes(types.get(column)!)) {
          issues.push({ message: `algorithm column "${column}" is not numeric`, stepIndex: null });
        }
      }
      if (this.algorithm.algorithm === "kmeans" && (this.algorithm.k ?? 0) < 1) {
        issues.push({ message: "k must be at least 1", stepIndex: null });
      }
    }

    if (!this.chart) {
      issues.push({ message: "choose a chart", stepIndex: null });
    } else if (this.chart.chart_type === "histogram") {
      if (!this.chart.column || !names.has(this.chart.column)) {
        issues.push({ message: `chart references unknown column "${this.chart.column}"`, stepIndex: null });
      }
    } else {
      for (const column of [this.chart.x, ...(this.chart.y ?? [])]) {
        if (!column || !names.has(column)) {
          issues.push({ message: `chart references unknown column "${column}"`, stepIndex: null });
        }
      }
    }

    if (this.schedule.type === "at" && this.schedule.at_ms <= now) {
      issues.push({ message: "scheduled time is in the past", stepIndex: null });
    }
    return issues;
  }

  get submitEnabled(): boolean {
    return this.validate().length === 0;
  }

  /** Exactly the document POST /workflows accepts. */
  toDocument(): WorkflowDocument {
    return {
      name: this.name,
      input_dataset_ids: this.datasets.map((d) => d.dataset_id),
      pipeline: { steps: this.steps },
      algorithm: this.algorithm ?? { algorithm: "descriptive_stats", columns: [] },
      visualization: this.chart ?? { chart_type: "histogram", column: "" },
    };
  }

  /** Restores a draft from a saved application's workflow content. */
  static fromDocument(doc: WorkflowDocument, datasets: DatasetRecord[]): WorkflowDraft {
    const draft = new WorkflowDraft();
    draft.name = doc.name;
    draft.datasets = doc.input_dataset_ids
      .map((id) => datasets.find((d) => d.dataset_id === id))
      .filter((d): d is DatasetRecord => d !== undefined);
    draft.steps = doc.pipeline.steps.map((s) => JSON.parse(JSON.stringify(s)));
    draft.algorithm = JSON.parse(JSON.stringify(doc.algorithm));
    draft.chart = JSON.parse(JSON.stringify(doc.visualization));
    return draft;
  }
}

function algorithmColumns(spec: AlgorithmSpec): string[] {
  switch (spec.algorithm) {
    case "descriptive_stats":
      return spec.columns ?? [];
    case "linear_regression":
      return [spec.target ?? "", ...(spec.features ?? [])];
    case "kmeans":
      return spec.features ?? [];
    case "pearson_correlation":
      return [spec.col_a ?? "", spec.col_b ?? ""];
  }
}

/** Column references inside an expression/predicate document. */
function columnRefs(node: unknown): string[] {
  if (node === null || typeof node !== "object") return [];
  const record = node as Record<string, unknown>;
  const refs: string[] = [];
  if (record.op === "col" && typeof record.name === "string") refs.push(record.name);
  if (record.op === "shift" && typeof record.column === "string") refs.push(record.column);
  if (record.op === "agg_ref" && typeof record.column === "string") refs.push(record.column);
  for (const value of Object.values(record)) {
    if (typeof value === "object") refs.push(...columnRefs(value));
  }
  return refs;
}

function stepProblem(
  schema: SchemaEntry[],
  step: PrepStep,
  others: Map<string, SchemaEntry[]>,
): string | null {
  const names = new Set(schema.map(([n]) => n));
  switch (step.op) {
    case "create_column": {
      if (!step.name) return "new column needs a name";
      if (names.has(step.name)) return `column "${step.name}" already exists`;
      for (const ref of columnRefs(step.expr)) {
        if (!names.has(ref)) return `unknown column "${ref}"`;
      }
      return null;
    }
    case "drop_columns": {
      for (const name of step.names) if (!names.has(name)) return `unknown column "${name}"`;
      if (step.names.length >= schema.length) return "cannot drop every column";
      return null;
    }
    case "filter_rows": {
      for (const ref of columnRefs(step.pred)) {
        if (!names.has(ref)) return `unknown column "${ref}"`;
      }
      return null;
    }
    case "rename_column": {
      if (!names.has(step.from)) return `unknown column "${step.from}"`;
      if (step.to !== step.from && names.has(step.to)) return `column "${step.to}" already exists`;
      return null;
    }
    case "merge": {
      const right = others.get(step.right_dataset_id);
      if (!right) return "merge source is not among the selected datasets";
      const rightNames = new Set(right.map(([n]) => n));
      if (step.keys.length === 0) return "merge needs at least one key";
      for (const key of step.keys) {
        if (!names.has(key)) return `unknown key column "${key}"`;
        if (!rightNames.has(key)) return `key "${key}" missing from the merge source`;
      }
      for (const [n] of right) {
        if (!step.keys.includes(n) && names.has(n)) return `merge would duplicate column "${n}"`;
      }
      return null;
    }
    case "fill_null": {
      if (!names.has(step.column)) return `unknown column "${step.column}"`;
      const type = new Map(schema).get(step.column)!;
      if ((step.strategy.kind === "mean" || step.strategy.kind === "median") && !NUMERIC.includes(type)) {
        return `${step.strategy.kind} fill needs a numeric column`;
      }
      return null;
    }
    case "aggregate": {
      for (const name of step.group_by) if (!names.has(name)) return `unknown column "${name}"`;
      const taken = new Set(step.group_by);
      for (const [fn, column, out] of step.aggs) {
        if (!names.has(column)) return `unknown column "${column}"`;
        const type = new Map(schema).get(column)!;
        if ((fn === "mean" || fn === "sum") && !NUMERIC.includes(type)) {
          return `${fn} needs a numeric column`;
        }
        if (taken.has(out)) return `output column "${out}" repeats`;
        taken.add(out);
      }
      return null;
    }
  }
}

function applyStepToSchema(
  schema: SchemaEntry[],
  step: PrepStep,
  others: Map<string, SchemaEntry[]>,
): SchemaEntry[] | null {
  if (stepProblem(schema, step, others)) return null;
  switch (step.op) {
    case "create_column":
      // column type is settled server-side; numeric is the designer's guess
      return [...schema, [step.name, "float64"]];
    case "drop_columns":
      return schema.filter(([n]) => !step.names.includes(n));
    case "filter_rows":
      return schema;
    case "rename_column":
      return schema.map(([n, t]) => (n === step.from ? [step.to, t] : [n, t]));
    case "merge": {
      const right = others.get(step.right_dataset_id)!;
      return [...schema, ...right.filter(([n]) => !step.keys.includes(n))];
    }
    case "fill_null": {
      const kind = step.strategy.kind;
      if (kind === "mean" || kind === "median") {
        return schema.map(([n, t]) => (n === step.column ? [n, "float64"] : [n, t]));
      }
      return schema;
    }
    case "aggregate": {
      const types = new Map(schema);
      const out: SchemaEntry[] = step.group_by.map((n) => [n, types.get(n)!]);
      for (const [fn, column, name] of step.aggs) {
        if (fn === "count") out.push([name, "int64"]);
        else if (fn === "mean") out.push([name, "float64"]);
        else out.push([name, types.get(column)!]);
      }
      return out;
    }
  }
}
