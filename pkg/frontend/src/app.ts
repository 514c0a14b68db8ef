/**
 * Wires the service client, view state, and DOM together for one document.
 *
 * The app never bypasses the wire protocol: every mutation is an RPC, and
 * the authoritative state is always re-fetchable (`refresh()` rebuilds the
 * entire view from service queries alone).
 */

import { ServiceClient, ServiceError, TagRecord } from './protocol.js';
import { ViewState, applyEvent, initialState, withSnapshot } from './state.js';
import { Handlers, View } from './view.js';

function defaultData(annotationType: string): unknown {
    switch (annotationType) {
        case 'add-layer':
            return { layerName: 'debug', insertText: '' };
        case 'lm-unit-test':
            return { question: '' };
        default:
            return { note: '' };
    }
}

/** Resolve a DOM selection endpoint to an absolute document offset. */
export function absoluteOffset(node: Node, offsetInNode: number): number | null {
    let holder: HTMLElement | null =
        node.nodeType === Node.ELEMENT_NODE ? (node as HTMLElement) : node.parentElement;
    while (holder && holder.dataset.start === undefined) {
        holder = holder.parentElement;
    }
    if (!holder) return null;
    const base = Number(holder.dataset.start);
    if (node.nodeType === Node.TEXT_NODE) {
        return base + offsetInNode;
    }
    // Element endpoint: offset counts child nodes; sum the text before it.
    let consumed = 0;
    const children = Array.from(node.childNodes).slice(0, offsetInNode);
    for (const child of children) {
        consumed += child.textContent?.length ?? 0;
    }
    return base + consumed;
}

export class App {
    state: ViewState;
    view: View;
    private unsubscribe: (() => void) | null = null;
    onError: (message: string) => void = (message) => console.error(message);

    constructor(
        readonly root: HTMLElement,
        readonly client: ServiceClient,
        readonly path: string,
    ) {
        this.state = initialState(path);
        this.view = new View(root, this.handlers());
        this.view.pane.addEventListener('mouseup', () => this.captureSelection());
        this.view.pane.addEventListener('mouseover', (ev) => {
            const target = (ev.target as HTMLElement).closest?.('[data-tag-id]');
            if (target instanceof HTMLElement && target.dataset.tagId) {
                this.selectTag(target.dataset.tagId, false);
            }
        });
    }

    async start(): Promise<void> {
        await this.refresh();
        this.unsubscribe = this.client.subscribe(
            (event) => this.update(applyEvent(this.state, event)),
            (connection) => this.update({ ...this.state, connection }),
        );
    }

    stop(): void {
        this.unsubscribe?.();
        this.unsubscribe = null;
    }

    /** Rebuild the whole view from service queries (hard-refresh parity). */
    async refresh(): Promise<void> {
        const [doc, listed] = await Promise.all([
            this.client.getDocumentText(this.path),
            this.client.listAnnotations(this.path),
        ]);
        this.update(withSnapshot(this.state, doc.text, doc.digest, listed.annotations));
    }

    private async refreshAnnotations(): Promise<void> {
        const listed = await this.client.listAnnotations(this.path);
        this.update({ ...this.state, annotations: listed.annotations });
    }

    private update(next: ViewState): void {
        this.state = next;
        this.view.render(next);
    }

    private tag(tagId: string): TagRecord | undefined {
        return this.state.annotations.find((t) => t.id === tagId);
    }

    selectTag(tagId: string, reveal: boolean): void {
        if (this.state.selectedTag !== tagId) {
            this.update({ ...this.state, selectedTag: tagId });
        }
        if (reveal) this.view.revealAnchor(tagId);
    }

    /** Read the current DOM selection into [start, end) offsets. */
    captureSelection(): void {
        const selection = (this.root.ownerDocument.defaultView ?? window).getSelection?.();
        if (!selection || selection.rangeCount === 0 || selection.isCollapsed) {
            if (this.state.selection) this.update({ ...this.state, selection: null });
            return;
        }
        const range = selection.getRangeAt(0);
        const start = absoluteOffset(range.startContainer, range.startOffset);
        const end = absoluteOffset(range.endContainer, range.endOffset);
        if (start === null || end === null || start === end) return;
        this.update({
            ...this.state,
            selection: { start: Math.min(start, end), end: Math.max(start, end) },
        });
    }

    /** Programmatic selection entry point (kept for non-mouse callers). */
    setSelection(start: number, end: number): void {
        this.update({ ...this.state, selection: { start, end } });
    }

    private handlers(): Handlers {
        return {
            onSelectTag: (tagId) => this.selectTag(tagId, true),
            onAddFromSelection: (annotationType) => {
                void this.addFromSelection(annotationType);
            },
            onConfirm: (tagId) => void this.confirm(tagId),
            onReject: (tagId) => void this.reject(tagId),
            onRunTest: (tagId) => void this.runTest(tagId),
            onApplySuggestion: (tagId) => void this.applySuggestion(tagId),
            onSaveData: (tagId, raw) => void this.saveData(tagId, raw),
            onMoveToSelection: (tagId) => void this.moveToSelection(tagId),
        };
    }

    private async guard<T>(action: () => Promise<T>): Promise<T | undefined> {
        try {
            return await action();
        } catch (error) {
            const message =
                error instanceof ServiceError
                    ? `${error.code}: ${error.message}`
                    : String(error);
            this.onError(message);
            return undefined;
        }
    }

    async addFromSelection(annotationType: string): Promise<void> {
        const selection = this.state.selection;
        if (!selection) return;
        await this.guard(async () => {
            const tag = await this.client.addAnnotation(
                this.path, selection.start, selection.end,
                annotationType, defaultData(annotationType),
            );
            const annotations = this.state.annotations.some((t) => t.id === tag.id)
                ? this.state.annotations
                : [...this.state.annotations, tag];
            this.update({ ...this.state, annotations, selection: null, selectedTag: tag.id });
        });
    }

    async confirm(tagId: string): Promise<void> {
        await this.guard(async () => {
            const listed = await this.client.confirmProposals(this.path, [tagId]);
            const proposals = new Map(this.state.proposals);
            proposals.delete(tagId);
            this.update({ ...this.state, annotations: listed.annotations, proposals });
        });
    }

    async reject(tagId: string): Promise<void> {
        await this.guard(async () => {
            const listed = await this.client.rejectProposals(this.path, [tagId]);
            const proposals = new Map(this.state.proposals);
            proposals.delete(tagId);
            this.update({ ...this.state, annotations: listed.annotations, proposals });
        });
    }

    async runTest(tagId: string): Promise<void> {
        await this.guard(() => this.client.runLmUnitTest(tagId));
        await this.refreshAnnotations();
    }

    async applySuggestion(tagId: string): Promise<void> {
        const tag = this.tag(tagId);
        const data = tag?.data as { lastResult?: { suggestion?: string | null } } | null;
        const suggestion = data?.lastResult?.suggestion;
        if (!tag || typeof suggestion !== 'string') return;
        await this.guard(() =>
            this.client.setDocumentText(this.path, [
                {
                    position: tag.anchor.start,
                    deletedLength: tag.anchor.end - tag.anchor.start,
                    insertedText: suggestion,
                },
            ]),
        );
        await this.refresh();
    }

    async saveData(tagId: string, raw: string): Promise<void> {
        let parsed: unknown;
        try {
            parsed = JSON.parse(raw);
        } catch {
            this.onError('annotation data must be valid JSON');
            return;
        }
        await this.guard(() => this.client.setAnnotationData(tagId, parsed));
        await this.refreshAnnotations();
    }

    async moveToSelection(tagId: string): Promise<void> {
        const selection = this.state.selection;
        if (!selection) return;
        await this.guard(() =>
            this.client.moveAnnotation(this.path, tagId, selection.start, selection.end),
        );
        this.update({ ...this.state, selection: null });
        await this.refreshAnnotations();
    }
}
