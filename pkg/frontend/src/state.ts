/**
 * Client view state and the pure update functions that derive it from
 * service responses and events. The UI owns nothing authoritative: the whole
 * state is reproducible from list_annotations + get_document_text, and events
 * only keep it current between refreshes.
 */

import type { Proposal, ServiceEvent, TagRecord } from './protocol.js';

export interface Selection {
    start: number;
    end: number;
}

export interface ViewState {
    path: string;
    text: string;
    digest: string;
    annotations: TagRecord[];
    /** Pending re-anchor proposals keyed by tag id (staged, not persisted). */
    proposals: Map<string, Proposal>;
    selection: Selection | null;
    selectedTag: string | null;
    connection: 'connecting' | 'open' | 'closed';
}

export function initialState(path: string): ViewState {
    return {
        path,
        text: '',
        digest: '',
        annotations: [],
        proposals: new Map(),
        selection: null,
        selectedTag: null,
        connection: 'connecting',
    };
}

export function withSnapshot(
    state: ViewState,
    text: string,
    digest: string,
    annotations: TagRecord[],
): ViewState {
    return { ...state, text, digest, annotations };
}

/** Fold one service event into the state; events for other paths are ignored. */
export function applyEvent(state: ViewState, event: ServiceEvent): ViewState {
    if (event.path !== state.path) return state;
    switch (event.event) {
        case 'annotationsChanged': {
            const proposals = new Map(state.proposals);
            for (const tag of event.annotations) {
                if (tag.status !== 'proposed') proposals.delete(tag.id);
            }
            return { ...state, annotations: event.annotations, proposals };
        }
        case 'documentChanged':
            return {
                ...state,
                text: event.text,
                digest: event.digest,
                annotations: event.annotations,
            };
        case 'orphanDetected': {
            const proposals = new Map(state.proposals);
            if (event.proposal) {
                proposals.set(event.tagId, event.proposal);
            } else {
                proposals.delete(event.tagId);
            }
            const annotations = state.annotations.map((tag) =>
                tag.id === event.tagId
                    ? { ...tag, status: (event.proposal ? 'proposed' : 'orphaned') as TagRecord['status'] }
                    : tag,
            );
            return { ...state, annotations, proposals };
        }
        default:
            return state;
    }
}

/** 1-based line number of a character offset. */
export function lineOfOffset(text: string, offset: number): number {
    let line = 1;
    const limit = Math.min(offset, text.length);
    for (let i = 0; i < limit; i++) {
        if (text[i] === '\n') line += 1;
    }
    return line;
}

/** Split the document into per-line segments carrying absolute offsets. */
export interface LineSegment {
    line: number;
    start: number;
    text: string;
}

export function documentLines(text: string): LineSegment[] {
    const segments: LineSegment[] = [];
    let start = 0;
    let line = 1;
    for (const part of text.split('\n')) {
        segments.push({ line, start, text: part });
        start += part.length + 1;
        line += 1;
    }
    return segments;
}
