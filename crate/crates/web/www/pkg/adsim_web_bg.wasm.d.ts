/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_compare: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
export const demo_memory_history: (a: number) => [number, number];
export const demo_new: (a: number, b: bigint) => [number, number, number];
export const demo_reset: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
export const demo_schema: (a: number) => [number, number];
export const demo_step: (a: number, b: number, c: number) => [number, number, number, number];
export const demo_suggest: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
