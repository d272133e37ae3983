//! Validator core for an object-based ledger: owned objects settle through
//! consistent broadcast, shared objects through a consensus sequencer.

pub mod checkpoint;
pub mod committee;
pub mod consensus;
pub mod crypto;
pub mod digest;
pub mod error;
pub mod execution;
pub mod messages;
pub mod object;
pub mod reconfig;
pub mod store;
pub mod validator;

pub use committee::{Committee, EpochId, Stake};
pub use crypto::ValidatorId;
pub use digest::{Digest, Encode};
pub use object::{Address, Obj, ObjID, ObjKey, ObjRef, Ownership, TxDigest, Value, Version};
