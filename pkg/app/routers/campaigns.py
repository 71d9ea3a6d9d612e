"""Monte Carlo campaign endpoints router."""
import logging
from typing import List

from fastapi import APIRouter, HTTPException

from app import schemas
from app.database import get_campaign, list_campaigns, save_campaign, set_campaign_output
from app.exceptions import NavigationError, ReportIOError
from app.routers.dependencies import get_services
from app.services.campaign import monte_carlo
from app.services.reporting import emit_report

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/api/campaigns", tags=["Campaigns"])


@router.post("", response_model=schemas.CampaignResponse)
def create_campaign(request: schemas.CampaignRequest):
    """
    Run a Monte Carlo campaign, write its report files and store the summary.

    - **config**: Scenario configuration; ``config.runs`` sets the run count
    - **label**: Optional name shown in listings
    - **workers**: Worker processes for the runs
    """
    services = get_services()
    try:
        campaign = monte_carlo(request.config, workers=request.workers)
    except NavigationError as e:
        raise HTTPException(status_code=422, detail=str(e))

    config = request.config.model_dump(mode="json")
    campaign_id = save_campaign(request.label, len(campaign.reports), config, campaign.summary, None)
    output_dir = services.campaign_dir(campaign_id)
    try:
        emit_report(campaign, output_dir)
    except ReportIOError as e:
        # Summary stays stored without report files
        logger.error("❌ Campaign %d report failed: %s", campaign_id, e)
    else:
        set_campaign_output(campaign_id, output_dir)
        logger.info("✅ Campaign %d stored (%d runs)", campaign_id, len(campaign.reports))

    return get_campaign(campaign_id)


@router.get("", response_model=List[schemas.CampaignResponse])
def get_campaigns():
    """List stored campaigns in creation order."""
    return list_campaigns()


@router.get("/{campaign_id}", response_model=schemas.CampaignResponse)
def get_campaign_by_id(campaign_id: int):
    campaign = get_campaign(campaign_id)
    if not campaign:
        raise HTTPException(status_code=404, detail="Campaign not found")
    return campaign
