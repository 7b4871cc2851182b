//! Plain-text sparse triplet dump of an [`SdpProblem`].
//!
//! ```text
//! # sdp-triplets v1
//! # vars <n>
//! # orthant <k>
//! # blocks <d1> <d2> ...
//! # equalities <p>
//! obj <var> <value>
//! <block> <row> <col> <var> <value>
//! eq <row> <var> <value>
//! ```
//!
//! Indices are 1-based. Block `0` is the orthant (`col` is always 1), block `j ≥ 1`
//! is the `j`-th PSD block, listed by its upper triangle (`row ≤ col`) with plain
//! matrix entries. Variable `0` stands for the constant term (`h` or `b`); variable
//! `k ≥ 1` is the coefficient of `x_k`. The slack is `s = h − Σ x_k·G_k`.

use super::cone::{smat, svec, svec_len};
use super::{ConeSpec, SdpError, SdpProblem};
use crate::linalg::{Matrix, Vector};
use std::io::Write;

pub fn write_triplets<W: Write>(p: &SdpProblem, mut out: W) -> std::io::Result<()> {
    let cone = p.cone();
    let n = p.n_vars();
    writeln!(out, "# sdp-triplets v1")?;
    writeln!(out, "# vars {n}")?;
    writeln!(out, "# orthant {}", cone.nonneg_dim)?;
    let dims: Vec<String> = cone.psd_block_dims.iter().map(|d| d.to_string()).collect();
    writeln!(out, "# blocks {}", dims.join(" "))?;
    writeln!(out, "# equalities {}", p.n_equalities())?;
    for (k, &v) in p.c().iter().enumerate() {
        if v != 0.0 {
            writeln!(out, "obj {} {v:e}", k + 1)?;
        }
    }
    let column = |var: usize| -> Vector {
        if var == 0 {
            p.h().clone()
        } else {
            p.g().column(var - 1).into_owned()
        }
    };
    for var in 0..=n {
        let col = column(var);
        for i in 0..cone.nonneg_dim {
            if col[i] != 0.0 {
                writeln!(out, "0 {} 1 {var} {:e}", i + 1, col[i])?;
            }
        }
        for (b, (off, d)) in cone.psd_blocks().enumerate() {
            let m = smat(&col.as_slice()[off..off + svec_len(d)], d);
            for j in 0..d {
                for i in 0..=j {
                    if m[(i, j)] != 0.0 {
                        writeln!(out, "{} {} {} {var} {:e}", b + 1, i + 1, j + 1, m[(i, j)])?;
                    }
                }
            }
        }
    }
    for r in 0..p.n_equalities() {
        if p.b()[r] != 0.0 {
            writeln!(out, "eq {} 0 {:e}", r + 1, p.b()[r])?;
        }
        for k in 0..n {
            let v = p.a()[(r, k)];
            if v != 0.0 {
                writeln!(out, "eq {} {} {v:e}", r + 1, k + 1)?;
            }
        }
    }
    Ok(())
}

fn parse<T: std::str::FromStr>(tok: Option<&str>, line: usize) -> Result<T, SdpError> {
    let tok = tok.ok_or_else(|| SdpError::Parse { line, msg: "missing field".into() })?;
    tok.parse().map_err(|_| SdpError::Parse {
        line,
        msg: format!("cannot parse {tok:?}"),
    })
}

pub fn read_triplets(text: &str) -> Result<SdpProblem, SdpError> {
    let mut n = None;
    let mut orthant = None;
    let mut blocks: Option<Vec<usize>> = None;
    let mut neq = None;
    let mut body = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        if let Some(rest) = raw.strip_prefix('#') {
            let mut it = rest.split_whitespace();
            match it.next() {
                Some("vars") => n = Some(parse::<usize>(it.next(), line)?),
                Some("orthant") => orthant = Some(parse::<usize>(it.next(), line)?),
                Some("equalities") => neq = Some(parse::<usize>(it.next(), line)?),
                Some("blocks") => blocks = Some(it.map(|t| parse(Some(t), line)).collect::<Result<_, _>>()?),
                _ => {}
            }
            continue;
        }
        body.push((line, raw));
    }
    let missing = |what: &str| SdpError::Parse {
        line: 0,
        msg: format!("missing header `# {what}`"),
    };
    let n = n.ok_or_else(|| missing("vars"))?;
    let cone = ConeSpec::new(
        orthant.ok_or_else(|| missing("orthant"))?,
        blocks.ok_or_else(|| missing("blocks"))?,
    );
    let neq = neq.ok_or_else(|| missing("equalities"))?;

    let mut c = Vector::zeros(n);
    let mut cols = vec![Vector::zeros(cone.dim()); n + 1];
    let mut mats: Vec<Vec<Matrix>> = cone
        .psd_block_dims
        .iter()
        .map(|&d| vec![Matrix::zeros(d, d); n + 1])
        .collect();
    let mut a = Matrix::zeros(neq, n);
    let mut b = Vector::zeros(neq);
    let bad = |line: usize, msg: &str| SdpError::Parse { line, msg: msg.into() };

    for (line, raw) in body {
        let mut it = raw.split_whitespace();
        match it.clone().next() {
            Some("obj") => {
                it.next();
                let k: usize = parse(it.next(), line)?;
                if k == 0 || k > n {
                    return Err(bad(line, "objective variable out of range"));
                }
                c[k - 1] = parse(it.next(), line)?;
            }
            Some("eq") => {
                it.next();
                let r: usize = parse(it.next(), line)?;
                let k: usize = parse(it.next(), line)?;
                let v: f64 = parse(it.next(), line)?;
                if r == 0 || r > neq || k > n {
                    return Err(bad(line, "equality index out of range"));
                }
                if k == 0 {
                    b[r - 1] = v;
                } else {
                    a[(r - 1, k - 1)] = v;
                }
            }
            _ => {
                let blk: usize = parse(it.next(), line)?;
                let row: usize = parse(it.next(), line)?;
                let col: usize = parse(it.next(), line)?;
                let var: usize = parse(it.next(), line)?;
                let v: f64 = parse(it.next(), line)?;
                if var > n || row == 0 || col == 0 {
                    return Err(bad(line, "index out of range"));
                }
                if blk == 0 {
                    if row > cone.nonneg_dim || col != 1 {
                        return Err(bad(line, "orthant index out of range"));
                    }
                    cols[var][row - 1] = v;
                } else {
                    let d = *cone
                        .psd_block_dims
                        .get(blk - 1)
                        .ok_or_else(|| bad(line, "block index out of range"))?;
                    if row > col || col > d {
                        return Err(bad(line, "PSD entry must satisfy row ≤ col ≤ side"));
                    }
                    let m = &mut mats[blk - 1][var];
                    m[(row - 1, col - 1)] = v;
                    m[(col - 1, row - 1)] = v;
                }
            }
        }
    }
    for (bi, (off, d)) in cone.psd_blocks().enumerate() {
        for (var, col) in cols.iter_mut().enumerate() {
            col.rows_mut(off, svec_len(d))
                .copy_from_slice(&svec(&mats[bi][var]));
        }
    }
    let h = cols[0].clone();
    let mut g = Matrix::zeros(cone.dim(), n);
    for k in 0..n {
        g.set_column(k, &cols[k + 1]);
    }
    SdpProblem::with_equalities(c, g, h, a, b, cone)
}
