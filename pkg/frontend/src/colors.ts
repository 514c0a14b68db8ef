/**
 * Deterministic annotation colors: hashed from the tag id, overridable per
 * tag via a `color` field in its data.
 */

import type { TagRecord } from './protocol.js';

/** FNV-1a, 32-bit. */
export function hashId(id: string): number {
    let hash = 0x811c9dc5;
    for (let i = 0; i < id.length; i++) {
        hash ^= id.charCodeAt(i);
        hash = Math.imul(hash, 0x01000193) >>> 0;
    }
    return hash >>> 0;
}

export function colorForTag(tag: Pick<TagRecord, 'id' | 'data'>): string {
    const data = tag.data as { color?: unknown } | null;
    if (data && typeof data === 'object' && typeof data.color === 'string') {
        return data.color;
    }
    const hue = hashId(tag.id) % 360;
    return `hsl(${hue}, 70%, 45%)`;
}
