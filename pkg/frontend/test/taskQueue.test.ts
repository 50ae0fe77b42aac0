import { beforeEach, describe, expect, it } from 'vitest';

import { DeiApi } from '../src/api.js';
import { TaskSession } from '../src/taskQueue.js';
import { MockDei } from './mockDei.js';

describe('TaskSession', () => {
  let mock: MockDei;
  let api: DeiApi;
  let session: TaskSession;

  beforeEach(() => {
    mock = new MockDei();
    mock.addTask('t1', ['imgA', 'imgB']);
    mock.addTask('t2', ['imgC', 'imgD']);
    mock.addTask('t3', ['imgE', 'imgF']);
    api = new DeiApi('http://mock', mock.fetch);
    session = new TaskSession(api, 'ann0');
  });

  it('fetches open tasks and serves them in order', async () => {
    expect(await session.refresh()).toBe(3);
    expect(session.current()?.task_id).toBe('t1');
  });

  it('records exactly one response per submission', async () => {
    await session.refresh();
    const outcome = await session.submit('same');
    expect(outcome.ok).toBe(true);
    expect(mock.tasks.get('t1')!.responses).toHaveLength(1);
    expect(mock.tasks.get('t1')!.responses[0]![1]).toBe('same');
  });

  it('drops double submissions client-side', async () => {
    await session.refresh();
    const task = session.current()!;
    const [first, second] = await Promise.all([session.submit('same'), session.submit('same')]);
    // one click wins; the other is guarded out or lands on the next task
    const responses = mock.tasks.get(task.task_id)!.responses;
    expect(responses).toHaveLength(1);
    expect([first.ok, second.ok].filter(Boolean).length).toBeGreaterThanOrEqual(1);
  });

  it('server dedupe maps to a non-retry rejection', async () => {
    await session.refresh();
    // a response from this annotator already exists server-side
    mock.tasks.get('t1')!.responses.push(['ann0', 'same', 0]);
    const outcome = await session.submit('different');
    expect(outcome.ok).toBe(false);
    expect(outcome.queuedRetry).toBe(false);
    expect(mock.tasks.get('t1')!.responses).toHaveLength(1);
  });

  it('skip leaves the server untouched and advances', async () => {
    await session.refresh();
    const before = JSON.stringify([...mock.tasks.values()]);
    session.skip();
    expect(session.current()?.task_id).toBe('t2');
    expect(JSON.stringify([...mock.tasks.values()])).toBe(before);
    // skipped tasks do not come back on refresh
    await session.refresh();
    expect(session.current()?.task_id).toBe('t2');
  });

  it('queues a retry on network failure and flushes later', async () => {
    await session.refresh();
    mock.options.failNetwork = true;
    const outcome = await session.submit('same');
    expect(outcome.ok).toBe(false);
    expect(outcome.queuedRetry).toBe(true);
    expect(session.pendingRetries).toHaveLength(1);
    mock.options.failNetwork = false;
    expect(await session.flushRetries()).toBe(1);
    expect(mock.tasks.get('t1')!.responses).toHaveLength(1);
  });

  it('rolls the task back on a server rejection', async () => {
    await session.refresh();
    mock.tasks.delete('t1'); // server will 404 the submission
    const outcome = await session.submit('same');
    expect(outcome.ok).toBe(false);
    expect(outcome.queuedRetry).toBe(false);
    expect(session.current()?.task_id).toBe('t1'); // rolled back into view
  });

  it('never resurfaces tasks this annotator already answered', async () => {
    await session.refresh();
    await session.submit('same');
    await session.refresh();
    expect(session.current()?.task_id).toBe('t2');
  });
});
