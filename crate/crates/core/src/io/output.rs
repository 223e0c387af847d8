//! CSV tables, diagnostics streams and legacy VTK snapshots.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::manufactured::{observed_orders, ErrorReport, Variable};
use crate::mesh::Mesh;
use crate::scheme::{Layouts, State, StepDiagnostics};
use crate::{Error, Result};

/// Nodal field values at one time level; bubble dofs are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot<'m> {
    pub mesh: &'m Mesh,
    pub m: usize,
    pub t: f64,
    pub eta: Vec<f64>,
    pub c: Vec<f64>,
    pub sigma: Vec<[f64; 2]>,
    pub velocity: Vec<[f64; 2]>,
    pub pressure: Vec<f64>,
}

impl<'m> FieldSnapshot<'m> {
    pub fn from_state(mesh: &'m Mesh, layouts: &Layouts, state: &State) -> Self {
        let pairs = |l: &crate::spaces::DofLayout, v: &[f64]| -> Vec<[f64; 2]> {
            l.nodal_values(v, 0)
                .iter()
                .zip(l.nodal_values(v, 1))
                .map(|(a, b)| [*a, *b])
                .collect()
        };
        Self {
            mesh,
            m: state.m,
            t: state.t,
            eta: state.eta_nodal(),
            c: state.c.clone(),
            sigma: pairs(&layouts.sigma, &state.sigma),
            velocity: pairs(&layouts.u, &state.u),
            pressure: state.pi.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.eta
            .iter()
            .chain(&self.c)
            .chain(&self.pressure)
            .all(|v| v.is_finite())
            && self
                .sigma
                .iter()
                .chain(&self.velocity)
                .all(|v| v[0].is_finite() && v[1].is_finite())
    }

    fn validate(&self) -> Result<()> {
        let n = self.mesh.n_nodes();
        for len in [
            self.eta.len(),
            self.c.len(),
            self.sigma.len(),
            self.velocity.len(),
            self.pressure.len(),
        ] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: len,
                });
            }
        }
        Ok(())
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Legacy VTK text for a snapshot.
pub fn vtk_string(snap: &FieldSnapshot<'_>) -> Result<String> {
    snap.validate()?;
    let mesh = snap.mesh;
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "chemoflow m={} t={}", snap.m, snap.t);
    let _ = writeln!(s, "ASCII");
    let _ = writeln!(s, "DATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {} double", mesh.n_nodes());
    for p in &mesh.nodes {
        let _ = writeln!(s, "{} {} 0", p[0], p[1]);
    }
    let nt = mesh.n_triangles();
    let _ = writeln!(s, "CELLS {} {}", nt, 4 * nt);
    for t in &mesh.triangles {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(s, "CELL_TYPES {nt}");
    for _ in 0..nt {
        let _ = writeln!(s, "5");
    }
    let _ = writeln!(s, "POINT_DATA {}", mesh.n_nodes());
    let scalars = |s: &mut String, name: &str, v: &[f64]| {
        let _ = writeln!(s, "SCALARS {name} double 1");
        let _ = writeln!(s, "LOOKUP_TABLE default");
        for x in v {
            let _ = writeln!(s, "{x}");
        }
    };
    let vectors = |s: &mut String, name: &str, v: &[[f64; 2]]| {
        let _ = writeln!(s, "VECTORS {name} double");
        for x in v {
            let _ = writeln!(s, "{} {} 0", x[0], x[1]);
        }
    };
    scalars(&mut s, "eta", &snap.eta);
    scalars(&mut s, "c", &snap.c);
    vectors(&mut s, "sigma", &snap.sigma);
    vectors(&mut s, "velocity", &snap.velocity);
    scalars(&mut s, "pressure", &snap.pressure);
    Ok(s)
}

pub fn write_vtk(snap: &FieldSnapshot<'_>, path: &Path) -> Result<()> {
    write_file(path, &vtk_string(snap)?)
}

fn fmt_error(e: f64) -> String {
    format!("{e:.5e}")
}

fn fmt_order(o: Option<f64>) -> String {
    o.map(|v| format!("{v:.4}")).unwrap_or_default()
}

/// CSV table of one variable.
pub fn csv_table(report: &ErrorReport, var: Variable) -> Result<String> {
    let v = report
        .variable(var)
        .ok_or_else(|| Error::InvalidArgument(format!("report has no `{}` errors", var.name())))?;
    if report.mesh_sizes.is_empty() {
        return Err(Error::InvalidArgument("empty error report".into()));
    }
    let h = &report.h;
    // orders are computed from the printed values so the table is self-consistent
    let shown = |e: &[f64]| -> Vec<f64> {
        e.iter()
            .map(|x| fmt_error(*x).parse().unwrap_or(*x))
            .collect()
    };
    let o_l2 = observed_orders(&shown(&v.linf_l2), h);
    let o_h1 = observed_orders(&shown(&v.l2_h1), h);
    let o_inf = v.linf_h1.as_ref().map(|e| observed_orders(&shown(e), h));
    let mut s = String::from("k,error_linf_L2,order,error_l2_H1,order");
    if v.linf_h1.is_some() {
        s.push_str(",error_linf_H1,order");
    }
    s.push('\n');
    for (i, k) in report.mesh_sizes.iter().enumerate() {
        let order = |o: &[Option<f64>]| fmt_order(if i == 0 { None } else { o[i - 1] });
        let _ = write!(
            s,
            "{k},{},{},{},{}",
            fmt_error(v.linf_l2[i]),
            order(&o_l2),
            fmt_error(v.l2_h1[i]),
            order(&o_h1)
        );
        if let (Some(e), Some(o)) = (&v.linf_h1, &o_inf) {
            let _ = write!(s, ",{},{}", fmt_error(e[i]), order(o));
        }
        s.push('\n');
    }
    Ok(s)
}

/// One CSV per variable in `dir`; returns the written paths.
pub fn write_csv_tables(report: &ErrorReport, dir: &Path) -> Result<Vec<PathBuf>> {
    Variable::ALL
        .iter()
        .map(|&var| {
            let path = dir.join(format!("{}.csv", var.name()));
            write_file(&path, &csv_table(report, var)?)?;
            Ok(path)
        })
        .collect()
}

pub const DIAGNOSTICS_HEADER: &str = "m,t,mass,mass_drift,n_integral,pi_integral,div_residual,\
residual_n,residual_sigma,residual_c,residual_stokes,eta_min,eta_max,c_min,c_max,\
sigma_max,u_max,pi_min,pi_max";

/// Streams per-level diagnostics and the mass history.
pub struct DiagnosticsWriter {
    diag: fs::File,
    mass: fs::File,
    diag_path: PathBuf,
    mass_path: PathBuf,
}

impl DiagnosticsWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let diag_path = dir.join("diagnostics.csv");
        let mass_path = dir.join("mass_history.csv");
        let mut diag = fs::File::create(&diag_path).map_err(|e| Error::io(&diag_path, e))?;
        let mut mass = fs::File::create(&mass_path).map_err(|e| Error::io(&mass_path, e))?;
        writeln!(diag, "{DIAGNOSTICS_HEADER}").map_err(|e| Error::io(&diag_path, e))?;
        writeln!(mass, "m,t,mass,relative_drift").map_err(|e| Error::io(&mass_path, e))?;
        Ok(Self {
            diag,
            mass,
            diag_path,
            mass_path,
        })
    }

    pub fn record(&mut self, d: &StepDiagnostics, drift: f64) -> Result<()> {
        let r = |f: fn(&crate::scheme::StepReports) -> f64| {
            d.reports
                .as_ref()
                .map(|x| format!("{:e}", f(x)))
                .unwrap_or_default()
        };
        writeln!(
            self.diag,
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{},{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            d.m,
            d.t,
            d.mass,
            drift,
            d.n_integral,
            d.pi_integral,
            d.div_residual,
            r(|x| x.n.relative_residual()),
            r(|x| x.sigma.relative_residual()),
            r(|x| x.c.relative_residual()),
            r(|x| x.stokes.relative_residual()),
            d.eta.min,
            d.eta.max,
            d.c.min,
            d.c.max,
            d.sigma_norm.max,
            d.u_norm.max,
            d.pi.min,
            d.pi.max,
        )
        .map_err(|e| Error::io(&self.diag_path, e))?;
        writeln!(self.mass, "{},{:e},{:e},{:e}", d.m, d.t, d.mass, drift)
            .map_err(|e| Error::io(&self.mass_path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manufactured::VariableErrors;
    use crate::mesh::build_rect_mesh;
    use crate::scheme::InitMode;

    fn report(errors: Vec<f64>, ks: Vec<usize>) -> ErrorReport {
        ErrorReport {
            h: ks.iter().map(|&k| 1.0 / k as f64).collect(),
            mesh_sizes: ks,
            dt: 2e-4,
            t_final: 0.01,
            init_mode: InitMode::Elliptic,
            variables: Variable::ALL
                .iter()
                .map(|&variable| VariableErrors {
                    variable,
                    linf_l2: errors.clone(),
                    l2_h1: errors.clone(),
                    linf_h1: variable.has_linf_h1().then(|| errors.clone()),
                })
                .collect(),
        }
    }

    #[test]
    fn csv_orders() {
        let r = report(vec![4e-2, 1e-2], vec![10, 20]);
        let t = csv_table(&r, Variable::Eta).unwrap();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "k,error_linf_L2,order,error_l2_H1,order");
        assert_eq!(lines[1], "10,4.00000e-2,,4.00000e-2,");
        assert_eq!(lines[2], "20,1.00000e-2,2.0000,1.00000e-2,2.0000");
        let t = csv_table(&r, Variable::U1).unwrap();
        assert!(t.starts_with("k,error_linf_L2,order,error_l2_H1,order,error_linf_H1,order\n"));
        let single = csv_table(&report(vec![3e-2], vec![10]), Variable::C).unwrap();
        assert_eq!(single.lines().nth(1).unwrap(), "10,3.00000e-2,,3.00000e-2,");
    }

    #[test]
    fn vtk_two_triangles() {
        let mesh = build_rect_mesh(1.0, 1.0, 1, 1).unwrap();
        let snap = FieldSnapshot {
            mesh: &mesh,
            m: 0,
            t: 0.0,
            eta: vec![1.0; 4],
            c: vec![2.0; 4],
            sigma: vec![[0.0, 1.0]; 4],
            velocity: vec![[0.5, 0.0]; 4],
            pressure: vec![0.0; 4],
        };
        let s = vtk_string(&snap).unwrap();
        assert!(s.contains("POINTS 4 double"));
        assert!(s.contains("CELLS 2 8"));
        assert_eq!(s.lines().filter(|l| *l == "5").count(), 2);
        for key in [
            "SCALARS eta",
            "SCALARS c",
            "VECTORS sigma",
            "VECTORS velocity",
            "SCALARS pressure",
        ] {
            assert!(s.contains(key), "{key}");
        }
        let bad = FieldSnapshot {
            eta: vec![1.0; 3],
            ..snap
        };
        assert!(vtk_string(&bad).is_err());
    }
}
