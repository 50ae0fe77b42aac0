// Headless annotator session against a live DEI: resolves open pair
// tasks through the same TaskSession code path the browser uses, then
// reports what the dashboard shows. Used by the acceptance suite.
//
// usage: node dist/scripts/roundtrip.js <dei-base-url> <annotator-id> [maxTasks]

import { DeiApi } from '../src/api.js';
import { DashboardPoller } from '../src/dashboard.js';
import { TaskSession } from '../src/taskQueue.js';

async function main(): Promise<void> {
  const [baseUrl, annotatorId, maxArg] = process.argv.slice(2);
  if (!baseUrl || !annotatorId) {
    console.error('usage: roundtrip <dei-base-url> <annotator-id> [maxTasks]');
    process.exit(2);
  }
  const maxTasks = maxArg ? Number(maxArg) : 50;
  const api = new DeiApi(baseUrl);
  const session = new TaskSession(api, annotatorId);

  let answered = 0;
  let doubleSubmitRejected = 0;
  while (answered < maxTasks) {
    const available = await session.refresh(maxTasks);
    if (available === 0) break;
    const task = session.current()!;
    const outcome = await session.submit('same');
    if (outcome.ok) {
      answered++;
      // client guard: a second click on the same task must be a no-op.
      const again = await api
        .submitResponse(task.task_id, annotatorId, 'same')
        .then(() => false)
        .catch(() => true);
      if (again) doubleSubmitRejected++;
    } else {
      console.error(`submit failed on ${task.task_id}: ${outcome.detail}`);
      process.exit(1);
    }
  }

  const poller = new DashboardPoller(api, () => undefined, 1000);
  const view = await poller.tick();
  const metrics = await api.fetchMetrics();
  console.log(
    JSON.stringify({
      answered,
      doubleSubmitRejected,
      dashboardIndexedLabel: view.indexedLabel,
      metricsIndexed: metrics.images_indexed,
      metricsTotal: metrics.images_total,
      tasksRemaining: view.tasksRemaining,
    }),
  );
}

main().catch((err) => {
  console.error(String(err));
  process.exit(1);
});
