pub mod agent;
pub mod clock;
pub mod codegen;
pub mod coordinator;
pub mod corpus;
pub mod dataset;
pub mod device;
pub mod fsm;
pub mod m2m_log;
pub mod rag;
pub mod scenarios;
pub mod remote;
pub mod sim;
pub mod transport;
