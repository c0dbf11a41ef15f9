//! Pocket-conditioned 3D molecule generation with twin atom and motif
//! diffusion chains.
//!
//! - [`molio`]: molecular graphs, SDF/PDB I/O, bond perception, validity
//! - [`motif`]: fragment decomposition and motif vocabulary
//! - [`topo`]: Vietoris–Rips persistence and topological fingerprints
//! - [`denoiser`]: heterogeneous equivariant message-passing network
//! - [`diffusion`]: schedules, forward/posterior kernels, training and sampling
//! - [`eval`]: generation metrics and filter rules

pub mod denoiser;
pub mod diffusion;
pub mod eval;
pub mod molio;
pub mod motif;
pub mod topo;

pub use molio::{Atom, Bond, BondOrder, Element, MolecularGraph, PocketAtom, PocketCloud, Vec3};
pub use motif::{MotifId, MotifView, MotifVocabulary};
