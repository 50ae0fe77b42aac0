import { describe, expect, it } from 'vitest';

import { ApiError, DeiApi } from '../src/api.js';
import { decodePgm, toRgba } from '../src/pgm.js';
import { MockDei } from './mockDei.js';

describe('DeiApi contract', () => {
  it('parses the documented task schema', async () => {
    const mock = new MockDei();
    mock.addTask('t1', ['imgA', 'imgB']);
    const api = new DeiApi('http://mock', mock.fetch);
    const tasks = await api.fetchTasks('ann0');
    expect(tasks).toHaveLength(1);
    const task = tasks[0]!;
    expect(task.task_id).toBe('t1');
    expect(task.pair).toEqual(['imgA', 'imgB']);
    expect(task.state).toBe('open');
    expect(Array.isArray(task.responses)).toBe(true);
    expect('gold_truth' in task).toBe(false); // hidden truth never leaves the server
  });

  it('parses image records and blobs', async () => {
    const mock = new MockDei();
    mock.addImage('imgA', 12, 10);
    const api = new DeiApi('http://mock', mock.fetch);
    const record = await api.fetchImage('imgA');
    expect(record.width).toBe(12);
    expect(record.fiducials.length).toBeGreaterThan(0);
    const gray = decodePgm(await api.fetchImageBlob('imgA'));
    expect(gray.width).toBe(12);
    expect(gray.height).toBe(10);
    expect(gray.pixels).toHaveLength(120);
  });

  it('maps HTTP errors to ApiError with status', async () => {
    const mock = new MockDei();
    const api = new DeiApi('http://mock', mock.fetch);
    await expect(api.fetchImage('ghost')).rejects.toMatchObject({ status: 404 });
    mock.options.failNetwork = true;
    await expect(api.fetchMetrics()).rejects.toBeInstanceOf(ApiError);
    await expect(api.fetchMetrics()).rejects.toMatchObject({ status: 0 });
  });
});

describe('PGM decoding', () => {
  it('round-trips a synthetic P5 payload', () => {
    const header = new TextEncoder().encode('P5\n4 2\n255\n');
    const body = new Uint8Array([0, 64, 128, 255, 10, 20, 30, 40]);
    const data = new Uint8Array(header.length + body.length);
    data.set(header);
    data.set(body, header.length);
    const image = decodePgm(data.buffer);
    expect(image.width).toBe(4);
    expect(image.height).toBe(2);
    expect([...image.pixels]).toEqual([...body]);
    const rgba = toRgba(image);
    expect(rgba).toHaveLength(32);
    expect(rgba[4]).toBe(64);
    expect(rgba[7]).toBe(255);
  });

  it('rejects non-P5 and truncated payloads', () => {
    expect(() => decodePgm(new TextEncoder().encode('P2\n1 1\n255\n0').buffer)).toThrow(/P5/);
    expect(() => decodePgm(new TextEncoder().encode('P5\n4 4\n255\nxy').buffer)).toThrow(/truncated/);
  });

  it('handles comments and odd whitespace in headers', () => {
    const header = new TextEncoder().encode('P5\n# a comment\n 3\t1\n255\n');
    const body = new Uint8Array([1, 2, 3]);
    const data = new Uint8Array(header.length + body.length);
    data.set(header);
    data.set(body, header.length);
    const image = decodePgm(data.buffer);
    expect(image.width).toBe(3);
    expect([...image.pixels]).toEqual([1, 2, 3]);
  });
});
