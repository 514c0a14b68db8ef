/**
 * Typed client for the annotation service's HTTP shim: request/response over
 * POST /rpc, events over the /events server-sent-event stream.
 *
 * Transports are injectable so tests can run without a browser. The client
 * holds no annotation state of its own.
 */

export interface Anchor {
    start: number;
    end: number;
}

export interface AnchorContext {
    anchorText: string;
    prefix: string;
    suffix: string;
}

export type TagStatus = 'attached' | 'orphaned' | 'proposed';

export interface TagRecord {
    id: string;
    anchor: Anchor;
    context: AnchorContext;
    annotationType: string;
    status: TagStatus;
    data: unknown;
}

export interface Proposal {
    tagId: string;
    candidate: Anchor;
    candidateText: string;
    score: number;
    strategy: 'exact' | 'fuzzy' | 'semantic';
    accepted: boolean;
}

export interface AnchorUpdate {
    tagId: string;
    anchor: Anchor;
    outcome: 'unchanged' | 'shifted' | 'resized' | 'orphaned';
    status: TagStatus;
}

export interface AnnotationsChangedEvent {
    event: 'annotationsChanged';
    path: string;
    annotations: TagRecord[];
}

export interface DocumentChangedEvent {
    event: 'documentChanged';
    path: string;
    digest: string;
    text: string;
    updates: AnchorUpdate[];
    annotations: TagRecord[];
}

export interface OrphanDetectedEvent {
    event: 'orphanDetected';
    path: string;
    tagId: string;
    proposal: Proposal | null;
}

export type ServiceEvent =
    | AnnotationsChangedEvent
    | DocumentChangedEvent
    | OrphanDetectedEvent;

export interface ListResult {
    path: string;
    digest: string;
    stale: boolean;
    annotations: TagRecord[];
}

export interface DocumentTextResult {
    path: string;
    text: string;
    digest: string;
}

export interface NotifyResult {
    path: string;
    status: 'fresh' | 'stale';
    proposals: Proposal[];
    orphaned: string[];
}

export interface UnitTestResult {
    pass: boolean;
    suggestion: string | null;
}

export interface EditOperation {
    position: number;
    deletedLength: number;
    insertedText: string;
}

export class ServiceError extends Error {
    constructor(readonly code: string, message: string) {
        super(message);
        this.name = 'ServiceError';
    }
}

/** The subset of EventSource the client needs; injectable for tests. */
export interface EventStream {
    onmessage: ((ev: { data: string }) => void) | null;
    onerror: ((ev: unknown) => void) | null;
    close(): void;
}

export interface ClientOptions {
    fetchImpl?: typeof fetch;
    eventStreamFactory?: (url: string) => EventStream;
    /** Base delay in ms between reconnect attempts (doubles up to 16x). */
    reconnectDelay?: number;
}

export type ConnectionState = 'connecting' | 'open' | 'closed';

export class ServiceClient {
    private readonly fetchImpl: typeof fetch;
    private readonly makeStream: (url: string) => EventStream;
    private readonly reconnectDelay: number;
    private counter = 0;
    private stream: EventStream | null = null;
    private retryTimer: ReturnType<typeof setTimeout> | null = null;
    private retries = 0;
    private stopped = false;

    constructor(readonly baseUrl: string, options: ClientOptions = {}) {
        this.fetchImpl = options.fetchImpl ?? fetch.bind(globalThis);
        this.makeStream =
            options.eventStreamFactory ??
            ((url: string) => new EventSource(url) as unknown as EventStream);
        this.reconnectDelay = options.reconnectDelay ?? 1000;
    }

    async rpc<T>(op: string, params: Record<string, unknown> = {}): Promise<T> {
        this.counter += 1;
        const body = { op, requestId: `ui-${this.counter}`, ...params };
        const response = await this.fetchImpl(`${this.baseUrl}/rpc`, {
            method: 'POST',
            headers: { 'Content-Type': 'application/json' },
            body: JSON.stringify(body),
        });
        const parsed = await response.json();
        if (!parsed.ok) {
            throw new ServiceError(parsed.error?.code ?? 'unknown', parsed.error?.message ?? 'request failed');
        }
        return parsed.result as T;
    }

    /**
     * Subscribe to the event stream; reconnects with exponential backoff
     * until unsubscribed. Returns the unsubscribe function.
     */
    subscribe(
        onEvent: (event: ServiceEvent) => void,
        onState?: (state: ConnectionState) => void,
    ): () => void {
        this.stopped = false;
        const open = () => {
            if (this.stopped) return;
            onState?.('connecting');
            const stream = this.makeStream(`${this.baseUrl}/events`);
            this.stream = stream;
            stream.onmessage = (message) => {
                this.retries = 0;
                onState?.('open');
                let event: ServiceEvent;
                try {
                    event = JSON.parse(message.data) as ServiceEvent;
                } catch {
                    return; // keepalive or partial frame
                }
                onEvent(event);
            };
            stream.onerror = () => {
                stream.close();
                if (this.stopped) return;
                onState?.('closed');
                const delay = this.reconnectDelay * Math.min(16, 2 ** this.retries);
                this.retries += 1;
                this.retryTimer = setTimeout(open, delay);
            };
        };
        open();
        return () => {
            this.stopped = true;
            if (this.retryTimer) clearTimeout(this.retryTimer);
            this.stream?.close();
            onState?.('closed');
        };
    }

    // Typed wrappers over the wire operations the UI uses.

    listAnnotations(path: string): Promise<ListResult> {
        return this.rpc('list_annotations', { path });
    }

    getDocumentText(path: string): Promise<DocumentTextResult> {
        return this.rpc('get_document_text', { path });
    }

    addAnnotation(
        path: string,
        start: number,
        end: number,
        annotationType: string,
        data: unknown = null,
    ): Promise<TagRecord> {
        return this.rpc('add_annotation', { path, start, end, annotationType, data });
    }

    moveAnnotation(path: string, tagId: string, newStart: number, newEnd: number): Promise<TagRecord> {
        return this.rpc('move_annotation', { path, tagId, newStart, newEnd });
    }

    setAnnotationData(tagId: string, data: unknown): Promise<{ tagId: string; data: unknown }> {
        return this.rpc('set_annotation_data', { tagId, data });
    }

    setDocumentText(path: string, edits: EditOperation[]): Promise<unknown> {
        return this.rpc('set_document_text', { path, edits });
    }

    notifyExternalChange(path: string): Promise<NotifyResult> {
        return this.rpc('notify_external_change', { path });
    }

    confirmProposals(path: string, tagIds: string[]): Promise<ListResult> {
        return this.rpc('confirm_proposals', { path, tagIds });
    }

    rejectProposals(path: string, tagIds: string[]): Promise<ListResult> {
        return this.rpc('reject_proposals', { path, tagIds });
    }

    runLmUnitTest(tagId: string): Promise<UnitTestResult> {
        return this.rpc('run_lm_unit_test', { tagId });
    }
}
