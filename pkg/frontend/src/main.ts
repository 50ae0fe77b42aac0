import { DeiApi } from './api.js';
import { DashboardPoller } from './dashboard.js';
import { drawPair } from './overlay.js';
import { decodePgm } from './pgm.js';
import { TaskSession } from './taskQueue.js';
import type { Label, UiConfig } from './types.js';

async function loadConfig(): Promise<UiConfig> {
  const response = await fetch('./config.json');
  const config = (await response.json()) as Partial<UiConfig>;
  return {
    deiBaseUrl: config.deiBaseUrl ?? 'http://127.0.0.1:8400',
    annotatorId: config.annotatorId ?? `annotator-${Math.random().toString(36).slice(2, 8)}`,
    pollIntervalMs: config.pollIntervalMs ?? 2000,
  };
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

async function start(): Promise<void> {
  const config = await loadConfig();
  const api = new DeiApi(config.deiBaseUrl);
  const session = new TaskSession(api, config.annotatorId);
  el<HTMLElement>('annotator').textContent = config.annotatorId;

  let zoom = 1;
  let showFiducials = true;

  const status = el<HTMLElement>('status');
  const note = (text: string) => {
    status.textContent = text;
  };

  async function renderCurrent(): Promise<void> {
    const task = session.current();
    const controls = el<HTMLElement>('controls');
    if (!task) {
      el<HTMLElement>('pair-label').textContent = 'No open tasks';
      controls.classList.add('disabled');
      return;
    }
    el<HTMLElement>('pair-label').textContent = `Task ${task.task_id}: ${task.pair[0]} vs ${task.pair[1]}`;
    controls.classList.add('disabled'); // submit stays disabled until both images load
    const [a, b] = task.pair;
    const [recordA, recordB, blobA, blobB] = await Promise.all([
      api.fetchImage(a),
      api.fetchImage(b),
      api.fetchImageBlob(a),
      api.fetchImageBlob(b),
    ]);
    drawPair(el<HTMLCanvasElement>('canvas-a'), decodePgm(blobA), recordA.fiducials, { showFiducials, zoom });
    drawPair(el<HTMLCanvasElement>('canvas-b'), decodePgm(blobB), recordB.fiducials, { showFiducials, zoom });
    controls.classList.remove('disabled');
  }

  async function advance(): Promise<void> {
    if (!session.current()) {
      await session.refresh();
    }
    await renderCurrent();
  }

  async function submit(label: Label): Promise<void> {
    if (el<HTMLElement>('controls').classList.contains('disabled')) return;
    const outcome = await session.submit(label);
    if (outcome.ok) {
      note(`recorded "${label}" (${session.submittedCount} total)`);
    } else if (outcome.queuedRetry) {
      note(`offline: "${label}" queued for retry`);
    } else {
      note(`rejected: ${outcome.detail ?? 'unknown error'}`);
    }
    await advance();
  }

  el<HTMLButtonElement>('btn-same').addEventListener('click', () => void submit('same'));
  el<HTMLButtonElement>('btn-different').addEventListener('click', () => void submit('different'));
  el<HTMLButtonElement>('btn-unsure').addEventListener('click', () => void submit('unsure'));
  el<HTMLButtonElement>('btn-skip').addEventListener('click', () => {
    session.skip();
    note('skipped');
    void advance();
  });
  el<HTMLInputElement>('toggle-fiducials').addEventListener('change', (event) => {
    showFiducials = (event.target as HTMLInputElement).checked;
    void renderCurrent();
  });
  el<HTMLInputElement>('zoom').addEventListener('input', (event) => {
    zoom = Number((event.target as HTMLInputElement).value);
    void renderCurrent();
  });

  const poller = new DashboardPoller(
    api,
    (view) => {
      el<HTMLElement>('progress-label').textContent = view.indexedLabel;
      el<HTMLProgressElement>('progress-bar').value = view.progressFraction;
      el<HTMLElement>('tasks-remaining').textContent = `${view.tasksRemaining} tasks remaining`;
      el<HTMLElement>('auc').textContent = `AUC ${view.aucLabel}`;
    },
    config.pollIntervalMs,
  );
  poller.start();

  setInterval(() => void session.flushRetries(), config.pollIntervalMs);
  await advance();
}

void start().catch((err) => {
  document.body.textContent = `failed to start: ${String(err)}`;
});
