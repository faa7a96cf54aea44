use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{InventoryItem, MitigationPlan, ObservationBundle, Policy, PolicyError};

const PROVISIONERS: &[&str] = &["rancher.io/local-path", "kubernetes.io/aws-ebs", "ebs.csi.aws.com"];

/// Samples random lint-passing plans over the observed inventory. Used to
/// fuzz the safety kernel, not to solve anything.
#[derive(Clone, Debug)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
    max_len: usize,
}

impl RandomPolicy {
    pub fn new(seed: u64, max_len: usize) -> Self {
        RandomPolicy { rng: ChaCha8Rng::seed_from_u64(seed), max_len: max_len.max(1) }
    }

    fn pick<'a>(&mut self, inv: &'a [InventoryItem], kind: &str) -> Option<&'a InventoryItem> {
        let matching: Vec<&InventoryItem> = inv.iter().filter(|i| i.kind == kind).collect();
        matching.choose(&mut self.rng).copied()
    }

    fn command(&mut self, obs: &ObservationBundle) -> String {
        let inv = &obs.inventory;
        let ns = &obs.namespace;
        for _ in 0..8 {
            let choice = self.rng.gen_range(0..12);
            let text = match choice {
                0 => self.pick(inv, "deployment").map(|d| {
                    format!("kubectl scale deployment {} --replicas={} -n {ns}", d.name, self.rng.gen_range(0..4))
                }),
                1 => self.pick(inv, "deployment").map(|d| {
                    let tag = ["v1", "v2", "bad"].choose(&mut self.rng).unwrap();
                    let container = d.detail.clone().unwrap_or_else(|| d.name.clone());
                    format!(
                        r#"kubectl patch deployment {} -n {ns} -p '{{"spec":{{"template":{{"spec":{{"containers":[{{"name":"{container}","image":"{}:{tag}"}}]}}}}}}}}'"#,
                        d.name, d.name
                    )
                }),
                2 => self.pick(inv, "deployment").map(|d| format!("kubectl rollout restart deployment {} -n {ns}", d.name)),
                3 => self.pick(inv, "deployment").map(|d| format!("kubectl delete deployment {} -n {ns}", d.name)),
                4 => self.pick(inv, "service").map(|s| {
                    let port: u16 = s.detail.as_deref().and_then(|p| p.parse().ok()).unwrap_or(80);
                    let target = [port, 9999, 8080].choose(&mut self.rng).copied().unwrap();
                    format!(r#"kubectl patch service {} -n {ns} -p '{{"spec":{{"ports":[{{"port":{port},"targetPort":{target}}}]}}}}'"#, s.name)
                }),
                5 => self.pick(inv, "node").map(|n| format!("kubectl cordon {}", n.name)),
                6 => self.pick(inv, "node").map(|n| format!("kubectl uncordon {}", n.name)),
                7 => self.pick(inv, "pod").map(|p| format!("kubectl delete pod {} -n {ns}", p.name)),
                8 => {
                    let name = self
                        .pick(inv, "persistentvolumeclaim")
                        .map(|_| "geo-storage".to_owned())
                        .or_else(|| self.pick(inv, "storageclass").map(|s| s.name.clone()))
                        .unwrap_or_else(|| "standard".to_owned());
                    let provisioner = PROVISIONERS.choose(&mut self.rng).unwrap();
                    Some(format!(
                        "kubectl apply -f - <<EOF\napiVersion: storage.k8s.io/v1\nkind: StorageClass\nmetadata:\n  name: {name}\nprovisioner: {provisioner}\nEOF"
                    ))
                }
                9 => self.pick(inv, "storageclass").map(|s| format!("kubectl delete storageclass {}", s.name)),
                10 => self.pick(inv, "deployment").map(|d| {
                    format!(r#"kubectl patch deployment {} -n {ns} --type=merge -p '{{"spec":{{"template":{{"spec":{{"nodeSelector":null}}}}}}}}'"#, d.name)
                }),
                _ => Some(format!("kubectl get pods -n {ns}")),
            };
            if let Some(t) = text {
                return t;
            }
        }
        format!("kubectl get pods -n {ns}")
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn propose(&mut self, obs: &ObservationBundle, attempt: usize) -> Result<MitigationPlan, PolicyError> {
        let len = self.rng.gen_range(1..=self.max_len);
        let commands = (0..len).map(|_| self.command(obs)).collect();
        Ok(MitigationPlan { intent: format!("random attempt {attempt}"), commands, expected_effect: String::new() })
    }
}
