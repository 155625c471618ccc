/* tslint:disable */
/* eslint-disable */

/**
 * A live episode whose frames the page paints onto a canvas.
 */
export class EnvSession {
    free(): void;
    [Symbol.dispose](): void;
    action_dim(): number;
    /**
     * Current frame as row-major RGBA bytes, ready for `ImageData`.
     */
    frame_rgba(): Uint8Array;
    /**
     * `task` is `"pendulum"` or `"pointmass"`.
     */
    constructor(task: string, image_size: number, distractors: number, seed: bigint);
    size(): number;
    /**
     * Applies `(ax, ay)`, truncated to the task's action width; returns the reward.
     */
    step(ax: number, ay: number): number;
    steps(): number;
    total_reward(): number;
}

/**
 * CEM on the bandit. Returns `[mean, std, elite mean return]` per iteration,
 * flattened.
 */
export function cem_trace(target: number, population: number, elites: number, iterations: number, init_std: number, seed: bigint): Float64Array;

/**
 * InfoNCE on a `batch × batch` score matrix with `signal` added to the
 * diagonal and unit Gaussian noise everywhere. Returns
 * `[nce, nce + ln B, ln B]`: the term, its mutual-information estimate, and
 * the ceiling that estimate can never exceed.
 */
export function nce_probe(batch: number, signal: number, seed: bigint): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_envsession_free: (a: number, b: number) => void;
    readonly cem_trace: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number, number];
    readonly envsession_action_dim: (a: number) => number;
    readonly envsession_frame_rgba: (a: number) => [number, number];
    readonly envsession_new: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number];
    readonly envsession_size: (a: number) => number;
    readonly envsession_step: (a: number, b: number, c: number) => [number, number, number];
    readonly envsession_steps: (a: number) => number;
    readonly envsession_total_reward: (a: number) => number;
    readonly nce_probe: (a: number, b: number, c: bigint) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
