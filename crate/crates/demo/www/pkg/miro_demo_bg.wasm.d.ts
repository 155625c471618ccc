/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_envsession_free: (a: number, b: number) => void;
export const cem_trace: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number, number];
export const envsession_action_dim: (a: number) => number;
export const envsession_frame_rgba: (a: number) => [number, number];
export const envsession_new: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number];
export const envsession_size: (a: number) => number;
export const envsession_step: (a: number, b: number, c: number) => [number, number, number];
export const envsession_steps: (a: number) => number;
export const envsession_total_reward: (a: number) => number;
export const nce_probe: (a: number, b: number, c: bigint) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
