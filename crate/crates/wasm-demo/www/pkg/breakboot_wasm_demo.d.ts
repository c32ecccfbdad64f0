/* tslint:disable */
/* eslint-disable */

/**
 * One simulated dataset held by the page.
 */
export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Bootstrap test of no structural break against `alt_breaks` breaks.
     * `scheme` is `wr` or `wf`, `statistic` is `supwald` or `supf`.
     */
    bootstrap(statistic: string, scheme: string, alt_breaks: number, reps: number, seed: bigint): string;
    /**
     * Simulates `scenario` (h0m0, h1m0, h0m1, h1m1) under error `case`
     * (A to D) with `n_obs` observations and shift size `g`.
     */
    constructor(scenario: string, _case: string, n_obs: number, g: number, seed: bigint);
    /**
     * The simulated `y` and `x` with the true break dates.
     */
    series(): string;
    /**
     * Robust Wald statistic of one structural break at every admissible
     * date, with a stable reduced form and trimming `eps`.
     */
    wald_profile(eps: number): string;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_bootstrap: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: bigint) => [number, number, number, number];
    readonly demo_new: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint) => [number, number, number];
    readonly demo_series: (a: number) => [number, number, number, number];
    readonly demo_wald_profile: (a: number, b: number) => [number, number, number, number];
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
