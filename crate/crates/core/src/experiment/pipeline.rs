//! Forward pipelines: activation map, ECG and loss for one node, per fidelity.

use crate::ecg::{
    ecg_loss, synthetic_lead_fields, ActionPotentialParams, EcgOperator, EcgTrace, Electrode,
    IntracellularConductivity, LeadDefinition, LeadFieldSet, TimeGrid,
};
use crate::eikonal::{build_conduction_tensor, ActivationMap, ConductionTensorField, EikonalSolver};
use crate::mesh::NodeLocator;
use crate::{Error, NodeId, Result, SimplicialMesh};

/// Eikonal speeds (mm/ms).
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Speeds {
    pub v_l: f64,
    pub v_t: f64,
}

impl Default for Speeds {
    fn default() -> Self {
        Speeds { v_l: 0.6, v_t: 0.3 }
    }
}

/// One fidelity: mesh, conduction tensors and the lead-field operator.
#[derive(Clone, Debug)]
pub struct ForwardModel {
    mesh: SimplicialMesh,
    tensors: ConductionTensorField,
    operator: EcgOperator,
    lead_fields: LeadFieldSet,
    ap: ActionPotentialParams,
}

impl ForwardModel {
    pub fn new(
        mesh: SimplicialMesh,
        speeds: Speeds,
        cond: &IntracellularConductivity,
        ap: ActionPotentialParams,
        electrodes: &[Electrode],
        leads: &[LeadDefinition],
    ) -> Result<Self> {
        let lead_fields = synthetic_lead_fields(&mesh, electrodes, leads)?;
        Self::with_lead_fields(mesh, speeds, cond, ap, lead_fields)
    }

    pub fn with_lead_fields(
        mesh: SimplicialMesh,
        speeds: Speeds,
        cond: &IntracellularConductivity,
        ap: ActionPotentialParams,
        lead_fields: LeadFieldSet,
    ) -> Result<Self> {
        ap.validate()?;
        let tensors = build_conduction_tensor(&mesh, speeds.v_l, speeds.v_t)?;
        let operator = EcgOperator::new(&mesh, cond, &lead_fields)?;
        Ok(ForwardModel { mesh, tensors, operator, lead_fields, ap })
    }

    pub fn mesh(&self) -> &SimplicialMesh {
        &self.mesh
    }

    pub fn lead_fields(&self) -> &LeadFieldSet {
        &self.lead_fields
    }

    pub fn activation(&self, node: NodeId) -> Result<ActivationMap> {
        EikonalSolver::new(&self.mesh, &self.tensors)?.solve(node)
    }

    pub fn ecg(&self, node: NodeId, grid: TimeGrid) -> Result<EcgTrace> {
        let map = self.activation(node)?;
        self.operator.simulate(&map, &self.ap, grid)
    }
}

/// HF (and optionally LF) forward models against one reference ECG.
/// Candidate sites are HF nodes; LF evaluations use the nearest LF node.
#[derive(Clone, Debug)]
pub struct LossProblem {
    pub hf: ForwardModel,
    pub lf: Option<ForwardModel>,
    hf_to_lf: Vec<NodeId>,
    pub reference: EcgTrace,
}

impl LossProblem {
    pub fn new(hf: ForwardModel, lf: Option<ForwardModel>, reference: EcgTrace) -> Result<Self> {
        if reference.num_leads() != hf.lead_fields().num_leads() {
            return Err(Error::DimensionMismatch("reference ECG lead count differs from the lead set".into()));
        }
        let hf_to_lf = match &lf {
            Some(l) => {
                let loc = NodeLocator::new(l.mesh().vertices());
                hf.mesh().vertices().iter().map(|p| loc.nearest(p)).collect()
            }
            None => Vec::new(),
        };
        Ok(LossProblem { hf, lf, hf_to_lf, reference })
    }

    pub fn grid(&self) -> TimeGrid {
        self.reference.grid()
    }

    pub fn lf_node(&self, hf_node: NodeId) -> Option<NodeId> {
        self.hf_to_lf.get(hf_node.0).copied()
    }

    pub fn hf_loss(&self, node: NodeId) -> Result<f64> {
        ecg_loss(&self.hf.ecg(node, self.grid())?, &self.reference)
    }

    pub fn lf_ecg(&self, hf_node: NodeId) -> Result<EcgTrace> {
        let lf = self.lf.as_ref().ok_or_else(|| Error::Config("no low-fidelity model configured".into()))?;
        lf.ecg(self.hf_to_lf[hf_node.0], self.grid())
    }

    pub fn lf_loss(&self, hf_node: NodeId) -> Result<f64> {
        ecg_loss(&self.lf_ecg(hf_node)?, &self.reference)
    }
}
