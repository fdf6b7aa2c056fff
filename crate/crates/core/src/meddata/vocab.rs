use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

const COMMON_SYMPTOMS: &[&str] = &[
    "fever", "cough", "rash", "headache", "fatigue", "nausea", "vomiting", "diarrhea", "abdominal pain",
    "chest pain", "shortness of breath", "sore throat", "runny nose", "sneezing", "muscle ache", "joint pain",
    "chills", "night sweats", "weight loss", "loss of appetite", "dizziness", "fainting", "palpitations",
    "swelling", "itching", "blurred vision", "eye redness", "ear pain", "hearing loss", "back pain",
    "neck stiffness", "confusion", "seizure", "numbness", "tingling", "weakness", "tremor", "insomnia",
    "anxiety", "depressed mood", "frequent urination", "painful urination", "blood in urine", "constipation",
    "bloating", "heartburn", "jaundice", "pale skin", "bruising", "nosebleed", "hoarseness", "wheezing",
    "dry mouth", "excessive thirst", "hair loss", "skin lesion", "swollen lymph nodes", "cold hands",
    "hot flashes", "sensitivity to light",
];

const COMMON_DISEASES: &[(&str, &str)] = &[
    ("influenza", "Rest, fluids, antipyretics; antivirals within 48 hours of onset."),
    ("common cold", "Rest, fluids, saline nasal spray."),
    ("strep throat", "Antibiotics after confirmation; analgesics for pain."),
    ("malaria", "Artemisinin-based combination therapy; seek care urgently."),
    ("typhoid fever", "Antibiotics; oral rehydration."),
    ("cholera", "Oral rehydration salts; intravenous fluids if severe."),
    ("dengue", "Fluids and paracetamol; avoid NSAIDs."),
    ("measles", "Supportive care; vitamin A supplementation."),
    ("chickenpox", "Calamine lotion, antihistamines, hydration."),
    ("scabies", "Topical permethrin; wash bedding in hot water."),
    ("meningitis", "Emergency care; intravenous antibiotics."),
    ("pneumonia", "Antibiotics if bacterial; oxygen if breathless."),
    ("tuberculosis", "Multi-drug regimen for at least six months."),
    ("asthma", "Inhaled bronchodilators; avoid triggers."),
    ("bronchitis", "Rest, fluids, humidified air."),
    ("gastroenteritis", "Oral rehydration; bland diet."),
    ("urinary tract infection", "Antibiotics; increase fluid intake."),
    ("migraine", "Analgesics, rest in a dark room."),
    ("anemia", "Iron-rich diet or supplements; treat the cause."),
    ("hypertension", "Reduce salt, exercise; antihypertensives as prescribed."),
    ("type 2 diabetes", "Diet, exercise, metformin as prescribed."),
    ("hypothyroidism", "Thyroid hormone replacement."),
    ("hepatitis a", "Rest, hydration; avoid alcohol."),
    ("eczema", "Emollients; topical corticosteroids for flares."),
    ("conjunctivitis", "Warm compresses; antibiotic drops if bacterial."),
    ("otitis media", "Analgesics; antibiotics if persistent."),
    ("sinusitis", "Saline irrigation, decongestants."),
    ("gastritis", "Antacids; avoid NSAIDs and alcohol."),
    ("kidney stones", "Fluids, analgesics; urgent care if fever."),
    ("appendicitis", "Emergency surgical evaluation."),
    ("depression", "Talk therapy; antidepressants as prescribed."),
    ("anxiety disorder", "Cognitive behavioral therapy; relaxation techniques."),
    ("psoriasis", "Topical treatments; phototherapy."),
    ("ringworm", "Topical antifungal cream."),
    ("lyme disease", "Doxycycline as prescribed."),
    ("mononucleosis", "Rest, fluids; avoid contact sports."),
    ("covid-19", "Isolation, rest, fluids; seek care if breathless."),
    ("heat stroke", "Cool the body immediately; emergency care."),
    ("food poisoning", "Hydration; rest."),
    ("allergic rhinitis", "Antihistamines; avoid allergens."),
];

pub const SKIN_CLASSES: [&str; 26] = [
    "acne", "actinic keratosis", "alopecia", "atopic dermatitis", "basal cell carcinoma", "bullous disease",
    "cellulitis", "contact dermatitis", "eczema", "exanthem", "hemangioma", "herpes", "hives", "lichen planus",
    "lupus", "melanoma", "nail fungus", "psoriasis", "rosacea", "scabies", "seborrheic keratosis",
    "tinea", "urticaria", "vasculitis", "vitiligo", "warts",
];

fn normalize(name: &str) -> String {
    name.trim().to_lowercase()
}

fn check_names(names: &[String], what: &str) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for n in names {
        if n.is_empty() || n.contains([',', '\n', '\t', '\r']) {
            return Err(Error::Input(format!("invalid {what} name {n:?}")));
        }
        if !seen.insert(n) {
            return Err(Error::Input(format!("duplicate {what} name {n:?}")));
        }
    }
    if names.is_empty() {
        return Err(Error::Input(format!("empty {what} list")));
    }
    Ok(())
}

fn lines(text: &str) -> Vec<String> {
    text.lines().map(normalize).filter(|l| !l.is_empty()).collect()
}

/// Ordered, case-normalized symptom names; index = position.
#[derive(Clone, Debug, PartialEq)]
pub struct SymptomVocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl SymptomVocabulary {
    pub fn new(names: impl IntoIterator<Item = impl AsRef<str>>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(|n| normalize(n.as_ref())).collect();
        check_names(&names, "symptom")?;
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(SymptomVocabulary { names, index })
    }

    /// Built-in names, padded with `symptom_NNN` beyond the common list.
    pub fn with_size(n: usize) -> Self {
        let names: Vec<String> = (0..n)
            .map(|i| COMMON_SYMPTOMS.get(i).map_or_else(|| format!("symptom_{i:03}"), |s| s.to_string()))
            .collect();
        Self::new(names).expect("built-in names are valid")
    }

    pub fn desk() -> Self {
        Self::with_size(50)
    }

    pub fn full_scale() -> Self {
        Self::with_size(237)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::new(lines(text))
    }

    pub fn to_text(&self) -> String {
        self.names.iter().map(|n| format!("{n}\n")).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(&normalize(name)).copied()
    }

    /// One-hot (multi-hot) encoding; every unknown name is reported.
    pub fn encode<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> Result<Vec<f32>> {
        let mut v = vec![0.0f32; self.len()];
        let mut unknown = Vec::new();
        for n in names {
            match self.index_of(n) {
                Some(i) => v[i] = 1.0,
                None => unknown.push(n.to_string()),
            }
        }
        if unknown.is_empty() {
            Ok(v)
        } else {
            Err(Error::UnknownSymptoms(unknown))
        }
    }
}

/// Ordered disease names with optional treatment text.
#[derive(Clone, Debug, PartialEq)]
pub struct DiseaseCatalog {
    names: Vec<String>,
    treatments: Vec<String>,
}

impl DiseaseCatalog {
    pub fn new(names: impl IntoIterator<Item = impl AsRef<str>>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(|n| normalize(n.as_ref())).collect();
        check_names(&names, "disease")?;
        let treatments = vec![String::new(); names.len()];
        Ok(DiseaseCatalog { names, treatments })
    }

    /// Built-in names (with treatments where known), padded with `condition_NNN`.
    pub fn with_size(n: usize) -> Self {
        let mut c = Self::new((0..n).map(|i| {
            COMMON_DISEASES.get(i).map_or_else(|| format!("condition_{i:04}"), |(name, _)| name.to_string())
        }))
        .expect("built-in names are valid");
        for (i, (_, t)) in COMMON_DISEASES.iter().enumerate().take(n) {
            c.treatments[i] = t.to_string();
        }
        c
    }

    pub fn desk() -> Self {
        Self::with_size(100)
    }

    pub fn full_scale() -> Self {
        Self::with_size(1537)
    }

    pub fn skin() -> Self {
        Self::new(SKIN_CLASSES).expect("built-in names are valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::new(lines(text))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_text(&self) -> String {
        self.names.iter().map(|n| format!("{n}\n")).collect()
    }

    /// Applies a `disease_id<TAB>treatment` table. Ids must be in range.
    pub fn apply_treatments(&mut self, table: &str) -> Result<()> {
        for (lineno, line) in table.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, text) = line
                .split_once('\t')
                .ok_or_else(|| Error::Input(format!("treatment line {} lacks a tab", lineno + 1)))?;
            let id: usize = id
                .trim()
                .parse()
                .map_err(|_| Error::Input(format!("treatment line {}: bad id {id:?}", lineno + 1)))?;
            let slot = self
                .treatments
                .get_mut(id)
                .ok_or_else(|| Error::Input(format!("treatment line {}: id {id} out of range", lineno + 1)))?;
            *slot = text.trim().to_string();
        }
        Ok(())
    }

    pub fn treatments_text(&self) -> String {
        self.treatments
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.is_empty())
            .map(|(i, t)| format!("{i}\t{t}\n"))
            .collect()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn treatment(&self, id: usize) -> &str {
        &self.treatments[id]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_examples() {
        let v = SymptomVocabulary::new(["fever", "cough", "rash"]).unwrap();
        assert_eq!(v.encode(["fever", "rash"]).unwrap(), vec![1.0, 0.0, 1.0]);
        assert_eq!(v.encode([]).unwrap(), vec![0.0; 3]);
        match v.encode(["fevr", "rash", "x"]) {
            Err(Error::UnknownSymptoms(u)) => assert_eq!(u, vec!["fevr", "x"]),
            other => panic!("{other:?}"),
        }
        assert_eq!(v.encode(["  Fever "]).unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn sizes() {
        assert_eq!(SymptomVocabulary::desk().len(), 50);
        assert_eq!(SymptomVocabulary::full_scale().len(), 237);
        assert_eq!(DiseaseCatalog::desk().len(), 100);
        assert_eq!(DiseaseCatalog::full_scale().len(), 1537);
        assert_eq!(DiseaseCatalog::skin().len(), 26);
    }

    #[test]
    fn rejects_duplicates_after_normalizing() {
        assert!(SymptomVocabulary::new(["Fever", "fever"]).is_err());
        assert!(SymptomVocabulary::new(["a,b"]).is_err());
    }

    #[test]
    fn text_round_trip_and_treatments() {
        let v = SymptomVocabulary::desk();
        assert_eq!(SymptomVocabulary::parse(&v.to_text()).unwrap(), v);
        let mut c = DiseaseCatalog::new(["a", "b", "c"]).unwrap();
        c.apply_treatments("0\trest\n2\tfluids and rest\n").unwrap();
        assert_eq!(c.treatment(0), "rest");
        assert_eq!(c.treatment(1), "");
        assert!(c.apply_treatments("9\tx").is_err());
        assert!(c.apply_treatments("zero\tx").is_err());
        let again = {
            let mut d = DiseaseCatalog::new(["a", "b", "c"]).unwrap();
            d.apply_treatments(&c.treatments_text()).unwrap();
            d
        };
        assert_eq!(again, c);
    }
}
