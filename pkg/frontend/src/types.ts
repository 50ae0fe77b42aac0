// Wire types for the DEI /api/v1 surface the UI consumes.

export type Label = 'same' | 'different' | 'unsure';

export interface TaskRecord {
  task_id: string;
  pair: [string, string];
  state: 'open' | 'assigned' | 'resolved' | 'expired';
  responses: Array<[string, Label, number]>;
  consensus: Label | null;
  gold: boolean;
}

export interface ImageRecord {
  image_id: string;
  state: string;
  species: string;
  fiducials: Array<[number, number]>;
  width: number;
  height: number;
  metadata: Record<string, unknown>;
}

export interface MetricsPayload {
  images_total: number;
  images_indexed: number;
  tasks_open: number;
  tasks_resolved: number;
  pairs_verified: number;
  conflicts: number;
  cohorts: number;
  rows: Array<Record<string, number>>;
}

export interface ResponseAck {
  state: string;
  responses: number;
  consensus: Label | null;
}

export interface UiConfig {
  deiBaseUrl: string;
  annotatorId: string;
  pollIntervalMs: number;
}
