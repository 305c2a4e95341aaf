use super::space::FESpace;
use serde::Serialize;
use std::io::Write;

/// Flat field dump. `velocity` is component-major over all velocity nodes,
/// then lexicographic node order; `pressure` follows pressure node order.
#[derive(Clone, Debug, Serialize)]
pub struct FieldDump<'a> {
    pub ordering: &'static str,
    pub nx: usize,
    pub n_vnodes: usize,
    pub n_pnodes: usize,
    pub velocity: &'a [f64],
    pub pressure: &'a [f64],
}

pub const FIELD_ORDERING: &str = "component-major, lexicographic nodes (y then x)";

pub fn write_fields_json<W: Write>(space: &FESpace, velocity: &[f64], pressure: &[f64], w: W) -> std::io::Result<()> {
    let dump = FieldDump {
        ordering: FIELD_ORDERING,
        nx: space.mesh.nx,
        n_vnodes: space.n_vnodes(),
        n_pnodes: space.n_p(),
        velocity,
        pressure,
    };
    serde_json::to_writer(w, &dump).map_err(std::io::Error::other)
}

/// `node,x,y,ux,uy` rows for a full velocity vector.
pub fn write_velocity_csv<W: Write>(space: &FESpace, velocity: &[f64], mut w: W) -> std::io::Result<()> {
    let nv = space.n_vnodes();
    writeln!(w, "node,x,y,ux,uy")?;
    for v in 0..nv {
        let [x, y] = space.mesh.vnode_coords(v);
        writeln!(w, "{v},{x},{y},{:e},{:e}", velocity[v], velocity[nv + v])?;
    }
    Ok(())
}

/// `node,x,y,p` rows.
pub fn write_pressure_csv<W: Write>(space: &FESpace, pressure: &[f64], mut w: W) -> std::io::Result<()> {
    writeln!(w, "node,x,y,p")?;
    for (q, p) in pressure.iter().enumerate() {
        let [x, y] = space.mesh.pnode_coords(q);
        writeln!(w, "{q},{x},{y},{p:e}")?;
    }
    Ok(())
}
