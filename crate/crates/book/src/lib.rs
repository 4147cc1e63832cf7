//! The guide in `book/` as doc-tests, one module per chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/volumes.md")]
pub mod volumes {}
#[doc = include_str!("../../../book/src/plahe.md")]
pub mod plahe {}
#[doc = include_str!("../../../book/src/projection.md")]
pub mod projection {}
#[doc = include_str!("../../../book/src/similarity.md")]
pub mod similarity {}
#[doc = include_str!("../../../book/src/segdose.md")]
pub mod segdose {}
#[doc = include_str!("../../../book/src/augment.md")]
pub mod augment {}
#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
