//! Triangle meshes, OBJ I/O, sampling and proximity queries.

mod mesh;
mod obj;
mod query;
mod sample;

pub use mesh::{Aabb, TriMesh};
pub use obj::{format_obj, load_obj, parse_obj, save_obj, ObjLoad};
pub use query::{
    closest_point_triangle, edge_triangle_penetrations, edge_triangle_penetrations_exhaustive, inside,
    point_to_mesh_distance, segment_crosses_triangle, self_penetrations, winding_number, ClosestHit, MeshDistance,
    TriangleGrid,
};
pub(crate) use query::solid_angle;
pub use sample::{sample_surface, sample_vertices, SurfaceSample};
