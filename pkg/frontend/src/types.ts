// Document shapes exchanged with the platform API.

export type ColumnType = "string" | "int64" | "float64" | "bool" | "timestamp_ms_utc";

export type SchemaEntry = [name: string, type: ColumnType];

export interface DatasetRecord {
  dataset_id: string;
  owner_id: string;
  name: string;
  schema: SchemaEntry[];
  row_count: number;
  created_at_ms: number;
}

export interface AgreementRecord {
  agreement_id: string;
  dataset_id: string;
  provider_id: string;
  consumer_id: string;
  granted_at_ms: number;
  expires_at_ms: number;
  status: "active" | "revoked" | "expired";
}

export type PrepStep =
  | { op: "create_column"; name: string; expr: unknown }
  | { op: "drop_columns"; names: string[] }
  | { op: "filter_rows"; pred: unknown }
  | { op: "rename_column"; from: string; to: string }
  | { op: "merge"; right_dataset_id: string; keys: string[]; join_type: "inner" | "left" }
  | { op: "fill_null"; column: string; strategy: { kind: string; value?: unknown } }
  | { op: "aggregate"; group_by: string[]; aggs: [string, string, string][] };

export interface AlgorithmSpec {
  algorithm: "descriptive_stats" | "linear_regression" | "kmeans" | "pearson_correlation";
  columns?: string[];
  target?: string;
  features?: string[];
  k?: number;
  max_iter?: number;
  seed?: number;
  col_a?: string;
  col_b?: string;
}

export interface ChartSpec {
  chart_type: "line" | "bar" | "scatter" | "histogram";
  x?: string;
  y?: string[];
  column?: string;
  x_label?: string;
  y_label?: string;
}

export interface WorkflowDocument {
  name: string;
  input_dataset_ids: string[];
  pipeline: { steps: PrepStep[] };
  algorithm: AlgorithmSpec;
  visualization: ChartSpec;
}

export interface WorkflowRecord extends WorkflowDocument {
  workflow_id: string;
  owner_id: string;
  created_at_ms: number;
}

export type JobState =
  | "scheduled"
  | "queued"
  | "fetching"
  | "decrypting"
  | "running"
  | "encrypting_results"
  | "uploading"
  | "completed"
  | "failed"
  | "cancelled";

export const PHASE_CHAIN: JobState[] = [
  "scheduled",
  "queued",
  "fetching",
  "decrypting",
  "running",
  "encrypting_results",
  "uploading",
  "completed",
];

export const TERMINAL_STATES: JobState[] = ["completed", "failed", "cancelled"];

export interface JobRecordDoc {
  job_id: string;
  workflow_id: string;
  owner_id: string;
  schedule: { type: "immediate" } | { type: "at"; at_ms: number };
  state: JobState;
  sandbox_id: string | null;
  timestamps: Partial<Record<JobState, number>>;
  error: { code: string; message: string } | null;
  result_envelope_ref: string | null;
  derived_dataset_id: string | null;
}

export interface DataSeriesDoc {
  chart_type: "line" | "bar" | "scatter" | "histogram";
  x: (number | string | null)[];
  series: { name: string; y: (number | null)[] }[];
  x_label: string;
  y_label: string;
}

export interface ResultSetDoc {
  algorithm: string;
  metrics: Record<string, number | null>;
  tables: Record<string, { schema: SchemaEntry[]; nrows: number; columns: Record<string, unknown[]> }>;
  produced_at_ms: number;
}

export interface ResultsDoc {
  job_id: string;
  workflow_id: string | null;
  result_set: ResultSetDoc;
  data_series: DataSeriesDoc | null;
}

export interface Page<T> {
  items: T[];
  next_cursor: string | null;
}
