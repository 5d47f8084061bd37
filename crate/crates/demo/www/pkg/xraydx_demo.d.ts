/* tslint:disable */
/* eslint-disable */

export function binormal_json(separation: number, sd_ratio: number, prevalence: number, n: number): string;

export function class_weighting_json(positives: number, negatives: number, span: number, points: number): string;

export function lr_finder_json(init_lr: number, max_lr: number, n: number, curvature: number, noise: number, seed: number): string;

export function one_cycle_json(total: number, lr_low: number, lr_high: number, warmup: number, momentum_low: number, momentum_high: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly binormal_json: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly class_weighting_json: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly lr_finder_json: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly one_cycle_json: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
