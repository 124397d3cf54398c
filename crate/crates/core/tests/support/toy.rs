//! A small heterogeneous graph touching every relation.
#![allow(dead_code)]

use incsg::scene::HeteroSceneGraph;

pub fn toy_graph() -> HeteroSceneGraph {
    incsg::checks::toy_graph().unwrap()
}
