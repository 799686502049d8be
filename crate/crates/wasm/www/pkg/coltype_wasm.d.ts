/* tslint:disable */
/* eslint-disable */

/**
 * JavaScript handle around [`Demo`].
 */
export class DemoSession {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * JSON [`TableView`] of a user table given as a JSON array of string
     * arrays, one per column.
     */
    customTable(columns_json: string): string;
    constructor(num_tables: number, seed: number);
    /**
     * JSON [`TableView`] of a held-out table.
     */
    testTable(index: number): string;
    testTables(): number;
    /**
     * Trains and returns a JSON [`TrainSummary`].
     */
    train(family: string, steps: number, heads: number, epochs: number, seed: number): string;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demosession_free: (a: number, b: number) => void;
    readonly demosession_customTable: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demosession_new: (a: number, b: number) => [number, number, number];
    readonly demosession_testTable: (a: number, b: number) => [number, number, number, number];
    readonly demosession_testTables: (a: number) => number;
    readonly demosession_train: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
