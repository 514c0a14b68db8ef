/** Test utilities: SSE-over-fetch stream for node, waiting, service spawning. */

import { spawn, ChildProcess } from 'node:child_process';
import { mkdtemp, writeFile } from 'node:fs/promises';
import { tmpdir } from 'node:os';
import * as path from 'node:path';

import type { EventStream } from '../src/protocol.js';

/** Minimal EventSource replacement for node: reads an SSE stream via fetch. */
export class NodeEventSource implements EventStream {
    onmessage: ((ev: { data: string }) => void) | null = null;
    onerror: ((ev: unknown) => void) | null = null;
    private controller = new AbortController();

    constructor(url: string) {
        void this.run(url);
    }

    private async run(url: string): Promise<void> {
        try {
            const response = await fetch(url, { signal: this.controller.signal });
            const reader = response.body!.getReader();
            const decoder = new TextDecoder();
            let buffer = '';
            for (;;) {
                const { done, value } = await reader.read();
                if (done) break;
                buffer += decoder.decode(value, { stream: true });
                let cut;
                while ((cut = buffer.indexOf('\n\n')) !== -1) {
                    const frame = buffer.slice(0, cut);
                    buffer = buffer.slice(cut + 2);
                    const data = frame
                        .split('\n')
                        .filter((line) => line.startsWith('data: '))
                        .map((line) => line.slice('data: '.length))
                        .join('\n');
                    if (data) this.onmessage?.({ data });
                }
            }
            this.onerror?.(new Error('event stream ended'));
        } catch (error) {
            if (!this.controller.signal.aborted) this.onerror?.(error);
        }
    }

    close(): void {
        this.controller.abort();
    }
}

export async function waitFor(
    condition: () => boolean,
    label: string,
    timeoutMs = 10000,
): Promise<void> {
    const deadline = Date.now() + timeoutMs;
    while (Date.now() < deadline) {
        if (condition()) return;
        await new Promise((resolve) => setTimeout(resolve, 50));
    }
    throw new Error(`timed out waiting for ${label}`);
}

export interface RunningService {
    httpUrl: string;
    repo: string;
    stop(): void;
}

const PYTHON_SRC = path.resolve(__dirname, '..', '..', 'src');

/** Spawn the real annotation service on ephemeral ports over a temp repo. */
export async function spawnService(
    files: Record<string, string>,
    extraArgs: string[] = [],
): Promise<RunningService> {
    const repo = await mkdtemp(path.join(tmpdir(), 'codetations-ui-'));
    for (const [rel, content] of Object.entries(files)) {
        await writeFile(path.join(repo, rel), content, 'utf-8');
    }
    const proc: ChildProcess = spawn(
        'python3',
        ['-m', 'codetations.cli', '--repo', repo, 'serve', '--port', '0', ...extraArgs],
        { env: { ...process.env, PYTHONPATH: PYTHON_SRC }, stdio: ['ignore', 'pipe', 'pipe'] },
    );
    let output = '';
    let stderr = '';
    proc.stdout!.on('data', (chunk) => (output += String(chunk)));
    proc.stderr!.on('data', (chunk) => (stderr += String(chunk)));

    const deadline = Date.now() + 15000;
    let httpPort: number | null = null;
    while (Date.now() < deadline) {
        const match = output.match(/http shim \(rpc\/events\): 127\.0\.0\.1:(\d+)/);
        if (match) {
            httpPort = Number(match[1]);
            break;
        }
        if (proc.exitCode !== null) {
            throw new Error(`service exited early: ${stderr || output}`);
        }
        await new Promise((resolve) => setTimeout(resolve, 50));
    }
    if (httpPort === null) {
        proc.kill();
        throw new Error(`service did not report its port; output: ${output} ${stderr}`);
    }
    return {
        httpUrl: `http://127.0.0.1:${httpPort}`,
        repo,
        stop: () => proc.kill(),
    };
}
