import { ApiError, DeiApi } from './api.js';
import type { Label, TaskRecord } from './types.js';

export interface SubmitOutcome {
  ok: boolean;
  queuedRetry: boolean;
  detail?: string;
}

/**
 * One annotator's task session: a local view of the open-task queue with
 * self-selection (skip is purely client-side), a double-submit guard,
 * and a retry queue for network failures. Labels are optimistic: the
 * task leaves the queue immediately and returns on API rejection.
 */
export class TaskSession {
  private queue: TaskRecord[] = [];
  private readonly skipped = new Set<string>();
  private readonly submitted = new Set<string>();
  private readonly inflight = new Set<string>();
  readonly pendingRetries: Array<{ taskId: string; label: Label }> = [];
  submittedCount = 0;

  constructor(
    private readonly api: DeiApi,
    readonly annotatorId: string,
  ) {}

  async refresh(max = 10): Promise<number> {
    const tasks = await this.api.fetchTasks(this.annotatorId, max);
    this.queue = tasks.filter(
      (t) =>
        (t.state === 'open' || t.state === 'assigned') &&
        !this.skipped.has(t.task_id) &&
        !this.submitted.has(t.task_id) &&
        !t.responses.some(([annotator]) => annotator === this.annotatorId),
    );
    return this.queue.length;
  }

  current(): TaskRecord | undefined {
    return this.queue[0];
  }

  /** Self-selection: server state is untouched, the task just moves on. */
  skip(): TaskRecord | undefined {
    const task = this.queue.shift();
    if (task) this.skipped.add(task.task_id);
    return this.current();
  }

  async submit(label: Label): Promise<SubmitOutcome> {
    const task = this.current();
    if (!task) return { ok: false, queuedRetry: false, detail: 'no task displayed' };
    if (this.inflight.has(task.task_id) || this.submitted.has(task.task_id)) {
      // double-submit guard: the click is dropped, nothing sent
      return { ok: false, queuedRetry: false, detail: 'already submitted' };
    }
    this.inflight.add(task.task_id);
    this.queue.shift(); // optimistic: advance immediately
    try {
      await this.api.submitResponse(task.task_id, this.annotatorId, label);
      this.submitted.add(task.task_id);
      this.submittedCount++;
      return { ok: true, queuedRetry: false };
    } catch (err) {
      if (err instanceof ApiError && err.status === 0) {
        // network failure: queue a retry, keep the optimistic advance
        this.pendingRetries.push({ taskId: task.task_id, label });
        return { ok: false, queuedRetry: true, detail: err.message };
      }
      if (err instanceof ApiError && err.status === 409) {
        // server-side dedupe: treat as already recorded
        this.submitted.add(task.task_id);
        return { ok: false, queuedRetry: false, detail: err.message };
      }
      // rejection: roll the task back into view
      this.queue.unshift(task);
      const detail = err instanceof Error ? err.message : String(err);
      return { ok: false, queuedRetry: false, detail };
    } finally {
      this.inflight.delete(task.task_id);
    }
  }

  async flushRetries(): Promise<number> {
    let flushed = 0;
    while (this.pendingRetries.length > 0) {
      const { taskId, label } = this.pendingRetries[0]!;
      try {
        await this.api.submitResponse(taskId, this.annotatorId, label);
        this.submitted.add(taskId);
        this.submittedCount++;
        flushed++;
        this.pendingRetries.shift();
      } catch (err) {
        if (err instanceof ApiError && err.status === 409) {
          this.submitted.add(taskId);
          this.pendingRetries.shift();
          continue;
        }
        break; // still offline; try again later
      }
    }
    return flushed;
  }

  remaining(): number {
    return this.queue.length;
  }
}
