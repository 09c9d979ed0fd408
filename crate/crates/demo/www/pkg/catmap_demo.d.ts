/* tslint:disable */
/* eslint-disable */

/**
 * `theta` with `E(nu, chi) = 2 p^{k/2} cos(theta)` over characters with
 * `2 t_chi != -nu (mod p)`.
 */
export function exp_sum_angles(a: Int32Array, p: number, k: number, nu: number): Float64Array;

/**
 * Normalized matrix elements of `cos(2 pi (n1 x + n2 y))` for a split prime,
 * followed by `samples` draws from the limiting model. The first entry is
 * the number of matrix elements.
 */
export function matrix_elements_vs_model(a: Int32Array, p: number, k: number, n1: number, n2: number, samples: number, seed: number): Float64Array;

/**
 * Kind of `p` for `A`: "split", "inert", or an error for ramified primes.
 */
export function prime_kind(a: Int32Array, p: number): string;

/**
 * `|psi(y)|^2` for the eigenfunction attached to character `j` (split `p`).
 */
export function split_eigenfunction_density(a: Int32Array, p: number, k: number, j: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly exp_sum_angles: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly matrix_elements_vs_model: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
    readonly prime_kind: (a: number, b: number, c: number) => [number, number, number, number];
    readonly split_eigenfunction_density: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
