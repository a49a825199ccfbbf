/* tslint:disable */
/* eslint-disable */

/**
 * Robot approach/transfer/retract track from arm speed, as JSON.
 */
export function robot_actions(arm_speed: Float64Array, v_min: number, hysteresis: number): string;

/**
 * Segmental F1 at 10/25/50 % overlap plus frame accuracy, as JSON.
 */
export function segmental_f1(pred: Uint32Array, gt: Uint32Array): string;

/**
 * Generate one synthetic trial and return its tracks as JSON.
 */
export function synth_trial(platform: string, task: string, outcome: string, seed: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly robot_actions: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly segmental_f1: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly synth_trial: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
