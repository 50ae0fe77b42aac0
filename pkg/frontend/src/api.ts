import type { ImageRecord, Label, MetricsPayload, ResponseAck, TaskRecord } from './types.js';

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

/** Thin typed client over the documented /api/v1 endpoints. */
export class DeiApi {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    } catch (err) {
      throw new ApiError(0, `network failure: ${String(err)}`);
    }
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = (await response.json()) as { detail?: string };
        if (body.detail) detail = body.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  fetchTasks(annotator: string, max = 10): Promise<TaskRecord[]> {
    const params = new URLSearchParams({ annotator, max: String(max) });
    return this.request<TaskRecord[]>(`/api/v1/tasks?${params}`);
  }

  submitResponse(taskId: string, annotator: string, label: Label): Promise<ResponseAck> {
    return this.request<ResponseAck>(`/api/v1/tasks/${taskId}/response`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ annotator, label }),
    });
  }

  fetchImage(imageId: string): Promise<ImageRecord> {
    return this.request<ImageRecord>(`/api/v1/images/${imageId}`);
  }

  async fetchImageBlob(imageId: string): Promise<ArrayBuffer> {
    const response = await this.fetchFn(`${this.baseUrl}/api/v1/images/${imageId}/blob`);
    if (!response.ok) throw new ApiError(response.status, `blob fetch failed for ${imageId}`);
    return response.arrayBuffer();
  }

  fetchMetrics(): Promise<MetricsPayload> {
    return this.request<MetricsPayload>('/api/v1/metrics');
  }

  imageBlobUrl(imageId: string): string {
    return `${this.baseUrl}/api/v1/images/${imageId}/blob`;
  }
}
