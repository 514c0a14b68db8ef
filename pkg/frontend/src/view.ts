/**
 * DOM rendering for the annotation client: a read-only document pane with
 * line numbers and anchor highlights, an annotation sidebar of cards, and a
 * banner for pending re-anchor proposals. Rendering is a pure function of
 * ViewState; all mutations go back through the handler callbacks.
 */

import { colorForTag } from './colors.js';
import type { Proposal, TagRecord } from './protocol.js';
import { ViewState, documentLines, lineOfOffset } from './state.js';

export interface Handlers {
    onSelectTag(tagId: string): void;
    onAddFromSelection(annotationType: string): void;
    onConfirm(tagId: string): void;
    onReject(tagId: string): void;
    onRunTest(tagId: string): void;
    onApplySuggestion(tagId: string): void;
    onSaveData(tagId: string, raw: string): void;
    onMoveToSelection(tagId: string): void;
}

export const ANNOTATION_TYPES = ['comment', 'add-layer', 'lm-unit-test'];

function el<K extends keyof HTMLElementTagNameMap>(
    tag: K,
    className?: string,
    text?: string,
): HTMLElementTagNameMap[K] {
    const node = document.createElement(tag);
    if (className) node.className = className;
    if (text !== undefined) node.textContent = text;
    return node;
}

interface Span {
    start: number;
    text: string;
    tag: TagRecord | null;
}

function attachedAt(annotations: TagRecord[], offset: number): TagRecord | null {
    for (const tag of annotations) {
        if (tag.status === 'attached' && tag.anchor.start <= offset && offset < tag.anchor.end) {
            return tag;
        }
    }
    return null;
}

/** Cut one line into spans at anchor boundaries, each knowing its offset. */
export function lineSpans(
    lineStart: number,
    lineText: string,
    annotations: TagRecord[],
): Span[] {
    const lineEnd = lineStart + lineText.length;
    const cuts = new Set<number>([lineStart, lineEnd]);
    for (const tag of annotations) {
        if (tag.status !== 'attached') continue;
        for (const point of [tag.anchor.start, tag.anchor.end]) {
            if (point > lineStart && point < lineEnd) cuts.add(point);
        }
    }
    const points = Array.from(cuts).sort((a, b) => a - b);
    const spans: Span[] = [];
    for (let i = 0; i + 1 < points.length; i++) {
        const start = points[i];
        spans.push({
            start,
            text: lineText.slice(start - lineStart, points[i + 1] - lineStart),
            tag: attachedAt(annotations, start),
        });
    }
    if (spans.length === 0) {
        spans.push({ start: lineStart, text: '', tag: null });
    }
    return spans;
}

export class View {
    readonly pane: HTMLElement;
    readonly sidebar: HTMLElement;
    readonly banner: HTMLElement;
    readonly addBar: HTMLElement;
    readonly status: HTMLElement;

    constructor(readonly root: HTMLElement, readonly handlers: Handlers) {
        root.innerHTML = '';
        this.status = el('div', 'connection-status');
        this.banner = el('div', 'proposal-banner');
        this.addBar = el('div', 'add-bar');
        const columns = el('div', 'columns');
        this.pane = el('div', 'document-pane');
        this.sidebar = el('div', 'annotation-sidebar');
        columns.append(this.pane, this.sidebar);
        root.append(this.status, this.banner, this.addBar, columns);
    }

    render(state: ViewState): void {
        this.renderStatus(state);
        this.renderBanner(state);
        this.renderAddBar(state);
        this.renderDocument(state);
        this.renderSidebar(state);
    }

    private renderStatus(state: ViewState): void {
        this.status.textContent = `${state.path} — ${state.connection}`;
        this.status.dataset.connection = state.connection;
    }

    private renderDocument(state: ViewState): void {
        this.pane.innerHTML = '';
        for (const segment of documentLines(state.text)) {
            const row = el('div', 'line');
            row.dataset.line = String(segment.line);
            const number = el('span', 'line-number', String(segment.line));
            const content = el('span', 'line-content');
            content.dataset.start = String(segment.start);
            for (const span of lineSpans(segment.start, segment.text, state.annotations)) {
                const piece = el('span', span.tag ? 'anchor' : 'plain', span.text);
                piece.dataset.start = String(span.start);
                if (span.tag) {
                    piece.dataset.tagId = span.tag.id;
                    piece.style.textDecorationColor = colorForTag(span.tag);
                    if (span.tag.id === state.selectedTag) piece.classList.add('selected');
                    piece.addEventListener('click', () =>
                        this.handlers.onSelectTag(span.tag!.id),
                    );
                }
                content.append(piece);
            }
            row.append(number, content);
            this.pane.append(row);
        }
    }

    private renderAddBar(state: ViewState): void {
        this.addBar.innerHTML = '';
        if (!state.selection || state.selection.start === state.selection.end) {
            this.addBar.classList.remove('active');
            return;
        }
        this.addBar.classList.add('active');
        const { start, end } = state.selection;
        this.addBar.append(
            el('span', 'add-label', `Annotate [${start}, ${end})`),
        );
        const picker = el('select', 'type-picker');
        for (const name of ANNOTATION_TYPES) {
            const option = el('option', undefined, name);
            option.value = name;
            picker.append(option);
        }
        const button = el('button', 'add-button', 'Add annotation');
        button.addEventListener('click', () =>
            this.handlers.onAddFromSelection(picker.value),
        );
        this.addBar.append(picker, button);
    }

    private renderBanner(state: ViewState): void {
        this.banner.innerHTML = '';
        if (state.proposals.size === 0) {
            this.banner.classList.remove('active');
            return;
        }
        this.banner.classList.add('active');
        this.banner.append(
            el('div', 'banner-title',
               `${state.proposals.size} annotation(s) detached by an external change`),
        );
        for (const proposal of state.proposals.values()) {
            this.banner.append(this.proposalRow(state, proposal));
        }
    }

    private proposalRow(state: ViewState, proposal: Proposal): HTMLElement {
        const tag = state.annotations.find((t) => t.id === proposal.tagId);
        const row = el('div', 'proposal');
        row.dataset.tagId = proposal.tagId;
        const summary = el('span', 'proposal-summary');
        const oldText = tag ? tag.context.anchorText : '?';
        summary.textContent =
            `${truncate(oldText)} → ${truncate(proposal.candidateText)} ` +
            `(score ${proposal.score.toFixed(2)}, ${proposal.strategy})`;
        const accept = el('button', 'accept', 'Accept');
        accept.addEventListener('click', () => this.handlers.onConfirm(proposal.tagId));
        const reject = el('button', 'reject', 'Reject');
        reject.addEventListener('click', () => this.handlers.onReject(proposal.tagId));
        row.append(summary, accept, reject);
        return row;
    }

    private renderSidebar(state: ViewState): void {
        this.sidebar.innerHTML = '';
        if (state.annotations.length === 0) {
            this.sidebar.append(el('div', 'empty', 'No annotations yet'));
            return;
        }
        for (const tag of state.annotations) {
            this.sidebar.append(this.card(state, tag));
        }
    }

    private card(state: ViewState, tag: TagRecord): HTMLElement {
        const card = el('div', 'card');
        card.dataset.tagId = tag.id;
        card.dataset.start = String(tag.anchor.start);
        card.dataset.end = String(tag.anchor.end);
        card.style.borderLeftColor = colorForTag(tag);
        if (tag.id === state.selectedTag) card.classList.add('selected');
        card.addEventListener('click', () => this.handlers.onSelectTag(tag.id));

        const line = lineOfOffset(state.text, tag.anchor.start);
        const header = el('div', 'card-header');
        header.append(
            el('span', 'card-type', tag.annotationType),
            el('span', 'card-line', `L${line}`),
            el('span', `card-status status-${tag.status}`, tag.status),
        );
        card.append(header);
        card.append(el('div', 'card-range', `[${tag.anchor.start}, ${tag.anchor.end})`));
        card.append(el('div', 'card-anchor-text', truncate(tag.context.anchorText)));

        if (tag.status === 'orphaned') {
            const move = el('button', 'move-manually', 'Move to selection');
            move.disabled = !state.selection || state.selection.start === state.selection.end;
            move.addEventListener('click', (ev) => {
                ev.stopPropagation();
                this.handlers.onMoveToSelection(tag.id);
            });
            card.append(move);
        }

        card.append(this.dataEditor(tag));
        if (tag.annotationType === 'lm-unit-test') {
            card.append(this.unitTestSection(tag));
        }
        return card;
    }

    private dataEditor(tag: TagRecord): HTMLElement {
        const wrap = el('div', 'card-data');
        const editor = el('textarea', 'data-editor');
        editor.value = JSON.stringify(tag.data ?? null, null, 1);
        editor.addEventListener('click', (ev) => ev.stopPropagation());
        const save = el('button', 'save-data', 'Save data');
        save.addEventListener('click', (ev) => {
            ev.stopPropagation();
            this.handlers.onSaveData(tag.id, editor.value);
        });
        wrap.append(editor, save);
        return wrap;
    }

    private unitTestSection(tag: TagRecord): HTMLElement {
        const data = (tag.data ?? {}) as {
            question?: string;
            lastResult?: { pass?: boolean; suggestion?: string | null; error?: string };
        };
        const section = el('div', 'unit-test');
        if (data.question) {
            section.append(el('div', 'question', `Q: ${data.question}`));
        }
        const run = el('button', 'run-test', 'Run test');
        run.addEventListener('click', (ev) => {
            ev.stopPropagation();
            this.handlers.onRunTest(tag.id);
        });
        section.append(run);
        const last = data.lastResult;
        if (last) {
            if (last.error) {
                section.append(el('div', 'test-result test-error', last.error));
            } else {
                section.append(
                    el('div', `test-result test-${last.pass ? 'pass' : 'fail'}`,
                       last.pass ? 'PASS' : 'FAIL'),
                );
                if (!last.pass && typeof last.suggestion === 'string') {
                    section.append(el('div', 'suggestion', truncate(last.suggestion)));
                    const apply = el('button', 'apply-suggestion', 'Apply suggestion');
                    apply.addEventListener('click', (ev) => {
                        ev.stopPropagation();
                        this.handlers.onApplySuggestion(tag.id);
                    });
                    section.append(apply);
                }
            }
        }
        return section;
    }

    /** Scroll the pane to a tag's first highlight (no-op if not rendered). */
    revealAnchor(tagId: string): void {
        const target = this.pane.querySelector<HTMLElement>(
            `[data-tag-id="${tagId}"]`,
        );
        target?.scrollIntoView?.({ block: 'center' });
    }
}

function truncate(text: string, limit = 120): string {
    return text.length > limit ? `${text.slice(0, limit)}…` : text;
}
