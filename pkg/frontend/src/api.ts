// REST client for the platform API. Pure fetch: every fact displayed by
// the workbench originates from one of these endpoints.

import type {
  AgreementRecord,
  DataSeriesDoc,
  DatasetRecord,
  JobRecordDoc,
  Page,
  ResultsDoc,
  WorkflowDocument,
  WorkflowRecord,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public code: string,
    message: string,
    public status: number,
    public correlationId: string = "",
    public stepIndex: number | null = null,
  ) {
    super(message);
  }

  get sessionExpired(): boolean {
    return this.status === 401;
  }
}

export class ApiClient {
  private token: string | null = null;

  constructor(public endpoint: string, private fetchImpl: typeof fetch = fetch) {}

  async login(principalId: string, secret: string): Promise<void> {
    const reply = await this.request<{ token: string }>("POST", "/auth/login", {
      principal_id: principalId,
      secret,
    }, false);
    this.token = reply.token;
  }

  get loggedIn(): boolean {
    return this.token !== null;
  }

  logout(): void {
    this.token = null;
  }

  private async request<T>(method: string, path: string, body?: unknown, auth = true): Promise<T> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (auth && this.token) headers["Authorization"] = `Bearer ${this.token}`;
    const response = await this.fetchImpl(this.endpoint + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await response.text();
    const parsed = text ? JSON.parse(text) : {};
    if (!response.ok) {
      throw new ApiError(
        parsed.code ?? "http-error",
        parsed.message ?? response.statusText,
        response.status,
        parsed.correlation_id ?? "",
        parsed.step_index ?? null,
      );
    }
    return parsed as T;
  }

  private async collect<T>(path: string): Promise<T[]> {
    const items: T[] = [];
    let cursor: string | null = null;
    do {
      const sep = path.includes("?") ? "&" : "?";
      const url = cursor ? `${path}${sep}cursor=${encodeURIComponent(cursor)}` : path;
      const page: Page<T> = await this.request("GET", url);
      items.push(...page.items);
      cursor = page.next_cursor;
    } while (cursor);
    return items;
  }

  health(): Promise<{ status: string }> {
    return this.request("GET", "/health", undefined, false);
  }

  listDatasets(): Promise<DatasetRecord[]> {
    return this.collect("/datasets");
  }

  listAgreements(): Promise<AgreementRecord[]> {
    return this.collect("/agreements");
  }

  createWorkflow(doc: WorkflowDocument): Promise<WorkflowRecord> {
    return this.request("POST", "/workflows", doc);
  }

  saveApplication(workflowId: string, name: string): Promise<{ application_id: string }> {
    return this.request("POST", "/applications", { workflow_id: workflowId, name });
  }

  listApplications(): Promise<{ application_id: string; name: string; workflow: WorkflowDocument }[]> {
    return this.collect("/applications");
  }

  submitJob(
    workflowId: string,
    schedule: { type: "immediate" } | { type: "at"; at_ms: number },
  ): Promise<JobRecordDoc> {
    return this.request("POST", "/jobs", { workflow_id: workflowId, schedule });
  }

  jobStatus(jobId: string): Promise<JobRecordDoc> {
    return this.request("GET", `/jobs/${jobId}`);
  }

  cancelJob(jobId: string): Promise<JobRecordDoc> {
    return this.request("POST", `/jobs/${jobId}/cancel`, {});
  }

  jobResults(jobId: string): Promise<ResultsDoc> {
    return this.request("GET", `/jobs/${jobId}/results`);
  }

  jobSeries(jobId: string): Promise<DataSeriesDoc> {
    return this.request("GET", `/jobs/${jobId}/series`);
  }
}
