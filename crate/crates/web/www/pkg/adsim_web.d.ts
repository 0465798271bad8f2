/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Baseline policies over `n_patients` seeded episodes on the
     * deterministic engine.
     */
    compare(cohort: string, n_patients: number, seed: bigint): string;
    /**
     * Memory trajectory so far (raw units).
     */
    memory_history(): Float64Array;
    /**
     * Fits the synthetic bundle; `n_subjects` around 400 keeps start-up
     * under a second.
     */
    constructor(n_subjects: number, seed: bigint);
    /**
     * Starts a new patient from the cohort's start-state model.
     */
    reset(cohort: string, seed: bigint): string;
    /**
     * Feature names, units, action names and the memory index.
     */
    schema(): string;
    /**
     * One six-month visit with the given 0/1 action bits.
     */
    step(bits: Uint8Array): string;
    /**
     * The named policy's action at the current observation and the Shapley
     * attribution of its score for `action_index` against the cohort mean.
     */
    suggest(policy: string, action_index: number, n_samples: number, seed: bigint): string;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_compare: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
    readonly demo_memory_history: (a: number) => [number, number];
    readonly demo_new: (a: number, b: bigint) => [number, number, number];
    readonly demo_reset: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
    readonly demo_schema: (a: number) => [number, number];
    readonly demo_step: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo_suggest: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number, number];
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
