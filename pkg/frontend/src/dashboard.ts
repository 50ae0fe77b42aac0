import { DeiApi } from './api.js';
import type { MetricsPayload } from './types.js';

export interface DashboardView {
  indexedLabel: string;
  progressFraction: number;
  tasksRemaining: number;
  aucLabel: string;
}

export function renderView(metrics: MetricsPayload): DashboardView {
  const total = metrics.images_total;
  const indexed = metrics.images_indexed;
  const lastRow = metrics.rows[metrics.rows.length - 1];
  const auc = lastRow && Number.isFinite(lastRow['auc']) ? lastRow['auc'] : undefined;
  return {
    indexedLabel: `${indexed} / ${total} indexed`,
    progressFraction: total > 0 ? indexed / total : 0,
    tasksRemaining: metrics.tasks_open,
    aucLabel: auc === undefined ? 'n/a' : auc!.toFixed(4),
  };
}

/** Poll /metrics on a fixed interval and hand each view to the sink. */
export class DashboardPoller {
  private timer: ReturnType<typeof setInterval> | undefined;
  lastView: DashboardView | undefined;

  constructor(
    private readonly api: DeiApi,
    private readonly sink: (view: DashboardView) => void,
    private readonly intervalMs = 2000,
  ) {}

  async tick(): Promise<DashboardView> {
    const metrics = await this.api.fetchMetrics();
    this.lastView = renderView(metrics);
    this.sink(this.lastView);
    return this.lastView;
  }

  start(): void {
    if (this.timer !== undefined) return;
    void this.tick().catch(() => undefined);
    this.timer = setInterval(() => void this.tick().catch(() => undefined), this.intervalMs);
  }

  stop(): void {
    if (this.timer !== undefined) clearInterval(this.timer);
    this.timer = undefined;
  }
}
