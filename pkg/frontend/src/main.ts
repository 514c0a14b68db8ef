/** Browser entry point: ?service=http://127.0.0.1:8378&path=src/main.c */

import { App } from './app.js';
import { ServiceClient } from './protocol.js';

const params = new URLSearchParams(window.location.search);
const service = params.get('service') ?? 'http://127.0.0.1:8378';
const path = params.get('path');

const root = document.getElementById('app');
if (!root) {
    throw new Error('missing #app element');
}
if (!path) {
    root.textContent =
        'Pass ?service=<http shim url>&path=<repo-relative file> to open a document.';
} else {
    const app = new App(root, new ServiceClient(service), path);
    app.onError = (message) => {
        const note = document.createElement('div');
        note.className = 'error-toast';
        note.textContent = message;
        document.body.append(note);
        setTimeout(() => note.remove(), 6000);
    };
    void app.start();
}
