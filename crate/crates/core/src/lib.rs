pub mod tensor;
pub mod minilang;
pub mod tsed;
pub mod oracle;
pub mod seed;
pub mod corpus;
pub mod model;
pub mod decode;
pub mod metrics;
