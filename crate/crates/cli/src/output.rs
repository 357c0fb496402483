use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use flexgrid::dynamics::SimulationTrace;

use crate::CliError;

fn fixed(x: f64) -> String {
    let s = format!("{x:.6}");
    // Tiny negatives would otherwise print as "-0.000000".
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

/// CSV text of a trace: one row per sample, six decimals, LF endings.
pub fn trace_csv(trace: &SimulationTrace) -> String {
    let n_gen = trace.f_gen.first().map_or(0, Vec::len);
    let mut out = String::from("t_s,f_coi_hz");
    for i in 1..=n_gen {
        out.push_str(&format!(",f_gen{i}_hz"));
    }
    out.push_str(",p_attack_pu,p_reserve_up_pu,p_reserve_down_pu\n");
    for k in 0..trace.len() {
        let mut row = vec![fixed(trace.times[k]), fixed(trace.f_coi[k])];
        row.extend(trace.f_gen[k].iter().map(|&f| fixed(f)));
        row.push(fixed(trace.p_attack[k]));
        row.push(fixed(trace.p_reserve_up[k]));
        row.push(fixed(trace.p_reserve_down[k]));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn temp_path(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.{}.tmp", std::process::id()))
}

/// Files are staged next to their destination and renamed only once every
/// one of them has been written, so a failure leaves nothing behind.
pub fn write_all_atomic(files: &[(&Path, &[u8])]) -> Result<(), CliError> {
    let mut staged: Vec<PathBuf> = Vec::new();
    let cleanup = |staged: &[PathBuf]| {
        for p in staged {
            let _ = fs::remove_file(p);
        }
    };
    for (path, bytes) in files {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            if let Err(e) = fs::create_dir_all(dir) {
                cleanup(&staged);
                return Err(io_err(dir)(e));
            }
        }
        let tmp = temp_path(path);
        let res = fs::File::create(&tmp).and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        });
        staged.push(tmp);
        if let Err(e) = res {
            cleanup(&staged);
            return Err(io_err(path)(e));
        }
    }
    let mut done: Vec<&Path> = Vec::new();
    for ((path, _), tmp) in files.iter().zip(&staged) {
        if let Err(e) = fs::rename(tmp, path) {
            cleanup(&staged);
            for p in done {
                let _ = fs::remove_file(p);
            }
            return Err(io_err(path)(e));
        }
        done.push(path);
    }
    Ok(())
}
