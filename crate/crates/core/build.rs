//! Links the reference BLAS/LAPACK statically. The distribution's
//! OpenBLAS 0.3.20 picks a Cooperlake kernel on AVX-512 machines that
//! breaks the conic solver's first iteration.

use std::path::Path;

fn main() {
    let dirs = ["/usr/lib/x86_64-linux-gnu/lapack", "/usr/lib/x86_64-linux-gnu/blas", "/usr/lib64", "/usr/lib"];
    let extra = std::env::var("DDLPV_LAPACK_DIR").ok();
    for d in extra.iter().map(String::as_str).chain(dirs) {
        if Path::new(d).exists() {
            println!("cargo:rustc-link-search=native={d}");
        }
    }
    println!("cargo:rustc-link-lib=static=lapack");
    println!("cargo:rustc-link-lib=static=blas");
    println!("cargo:rustc-link-lib=dylib=gfortran");
    println!("cargo:rerun-if-env-changed=DDLPV_LAPACK_DIR");
}
