/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const binormal_json: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const class_weighting_json: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const lr_finder_json: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const one_cycle_json: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
